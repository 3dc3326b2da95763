//! Frequency decomposition of per-frame error sequences.
//!
//! The forward transform is unnormalized, `F(k) = Σ ε_t e^{−i2πkt/T}`, and the
//! inverse carries the `1/T` factor. Non-negative frequency bins
//! `0..=T/2` are grouped into bands; band 0 is always the DC bin alone.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{FrameMetrics, MetricReport};
use crate::numeric::CompensatedSum;
use crate::video::{DepthVideo, VideoError};

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("sequence needs at least 2 values, got {0}")]
    TooShort(usize),
    #[error("value {value} at index {index} is not finite and non-negative")]
    BadValue { index: usize, value: f64 },
    #[error("spectrum is not conjugate symmetric (imaginary residue {residue:.3e})")]
    Symmetry { residue: f64 },
    #[error("cannot split {bins} bins into {bands} bands")]
    InfeasiblePartition { bins: usize, bands: usize },
    #[error("invalid custom boundaries: {0}")]
    BadBoundaries(String),
    #[error("band {index} out of range for {bands} bands")]
    BandIndex { index: usize, bands: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} frame(s) have no metric value")]
    MissingFrames(usize),
    #[error("no pixel is valid in every frame")]
    NoStablePixels,
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Absrel,
    Rmse,
    OneMinusDelta1,
}

impl MetricName {
    pub fn pick(self, f: &FrameMetrics) -> f64 {
        match self {
            MetricName::Absrel => f.absrel,
            MetricName::Rmse => f.rmse,
            MetricName::OneMinusDelta1 => 1.0 - f.delta1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Absrel => "absrel",
            MetricName::Rmse => "rmse",
            MetricName::OneMinusDelta1 => "one_minus_delta1",
        }
    }
}

impl std::str::FromStr for MetricName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absrel" => Ok(MetricName::Absrel),
            "rmse" => Ok(MetricName::Rmse),
            "one_minus_delta1" | "delta1" => Ok(MetricName::OneMinusDelta1),
            other => Err(format!("unknown metric `{other}` (expected absrel, rmse or one_minus_delta1)")),
        }
    }
}

/// Per-frame values of one error metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSequence {
    values: Vec<f64>,
    metric: MetricName,
}

impl ErrorSequence {
    pub fn new(values: Vec<f64>, metric: MetricName) -> Result<Self, SpectralError> {
        if values.len() < 2 {
            return Err(SpectralError::TooShort(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(SpectralError::BadValue { index, value });
        }
        Ok(Self { values, metric })
    }

    /// The sequence of `metric` over every frame of `report`.
    pub fn from_report(report: &MetricReport, metric: MetricName) -> Result<Self, SpectralError> {
        if report.skipped_frames > 0 {
            return Err(SpectralError::MissingFrames(report.skipped_frames));
        }
        Self::new(report.sequence(|f| metric.pick(f)), metric)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn metric(&self) -> MetricName {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().copied().collect::<CompensatedSum>().value() / self.values.len() as f64
    }
}

/// Full-length DFT coefficients of a real sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSpectrum {
    coefficients: Vec<Complex64>,
}

impl ErrorSpectrum {
    pub fn from_coefficients(coefficients: Vec<Complex64>) -> Result<Self, SpectralError> {
        if coefficients.len() < 2 {
            return Err(SpectralError::TooShort(coefficients.len()));
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn source_length(&self) -> usize {
        self.coefficients.len()
    }

    /// Largest `|F(k) − conj(F(T−k))|` relative to the largest magnitude.
    pub fn symmetry_error(&self) -> f64 {
        let t = self.coefficients.len();
        let scale = self.coefficients.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (0..t)
            .map(|k| (self.coefficients[k] - self.coefficients[(t - k) % t].conj()).norm())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Forward and inverse FFT plans for one length.
#[derive(Clone)]
pub struct TransformPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TransformPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformPlan").field("len", &self.len).finish()
    }
}

impl TransformPlan {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { len, forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform including the `1/T` factor; returns complex output.
    pub fn inverse_complex(&self, coefficients: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(coefficients.len(), self.len);
        let mut buf = coefficients.to_vec();
        self.inverse.process(&mut buf);
        let inv = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|c| *c *= inv);
        buf
    }

    /// Real part of the inverse; fails when the imaginary residue is not negligible.
    pub fn inverse(&self, coefficients: &[Complex64]) -> Result<Vec<f64>, SpectralError> {
        real_part(self.inverse_complex(coefficients))
    }
}

fn real_part(values: Vec<Complex64>) -> Result<Vec<f64>, SpectralError> {
    let scale = values.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    let residue = values.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if residue >= 1e-6 * scale {
        return Err(SpectralError::Symmetry { residue });
    }
    Ok(values.into_iter().map(|c| c.re).collect())
}

/// Direct O(T²) transforms, kept as the reference the fast path is checked against.
pub mod naive {
    use num_complex::Complex64;
    use std::f64::consts::PI;

    pub fn dft(values: &[f64]) -> Vec<Complex64> {
        let t = values.len();
        (0..t)
            .map(|k| {
                values
                    .iter()
                    .enumerate()
                    .map(|(n, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * n) % t) as f64 / t as f64))
                    .sum()
            })
            .collect()
    }

    pub fn idft(coefficients: &[Complex64]) -> Vec<Complex64> {
        let t = coefficients.len();
        (0..t)
            .map(|n| {
                coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * Complex64::from_polar(1.0, 2.0 * PI * ((k * n) % t) as f64 / t as f64))
                    .sum::<Complex64>()
                    / t as f64
            })
            .collect()
    }
}

pub fn dft(seq: &ErrorSequence) -> ErrorSpectrum {
    ErrorSpectrum { coefficients: TransformPlan::new(seq.len()).forward(seq.values()) }
}

pub fn idft(spectrum: &ErrorSpectrum) -> Result<Vec<f64>, SpectralError> {
    TransformPlan::new(spectrum.source_length()).inverse(spectrum.coefficients())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandScheme {
    Exponential,
    Linear,
    Custom,
}

/// Disjoint groups of the non-negative frequency bins `0..=T/2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandPartition {
    sequence_length: usize,
    /// `B + 1` strictly increasing bin indices; band `b` is `starts[b]..starts[b + 1]`.
    starts: Vec<usize>,
    scheme: BandScheme,
}

impl BandPartition {
    pub fn new(sequence_length: usize, band_count: usize, scheme: BandScheme) -> Result<Self, SpectralError> {
        let half = sequence_length / 2;
        let bins = half + 1;
        if sequence_length < 2 || band_count < 2 || band_count > bins {
            return Err(SpectralError::InfeasiblePartition { bins, bands: band_count });
        }
        let interior = band_count - 1;
        let mut starts = vec![0usize, 1];
        for b in 1..interior {
            let target = match scheme {
                BandScheme::Exponential => (half as f64).powf(b as f64 / interior as f64).round() as usize,
                BandScheme::Linear => 1 + (b as f64 * half as f64 / interior as f64).round() as usize,
                BandScheme::Custom => {
                    return Err(SpectralError::BadBoundaries("use BandPartition::custom".into()));
                }
            };
            let next = target.max(starts[b] + 1);
            if next > half {
                return Err(SpectralError::InfeasiblePartition { bins, bands: band_count });
            }
            starts.push(next);
        }
        starts.push(bins);
        Ok(Self { sequence_length, starts, scheme })
    }

    /// Bands from explicit start bins. `starts` must begin `[0, 1, ..]`, be
    /// strictly increasing and stay within `1..=T/2`.
    pub fn custom(sequence_length: usize, starts: &[usize]) -> Result<Self, SpectralError> {
        let bins = sequence_length / 2 + 1;
        if starts.len() < 2 || starts[0] != 0 || starts[1] != 1 {
            return Err(SpectralError::BadBoundaries("must start with 0, 1".into()));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectralError::BadBoundaries("must be strictly increasing".into()));
        }
        if *starts.last().unwrap() >= bins {
            return Err(SpectralError::BadBoundaries(format!("start bins must be below {bins}")));
        }
        let mut all = starts.to_vec();
        all.push(bins);
        Ok(Self { sequence_length, starts: all, scheme: BandScheme::Custom })
    }

    pub fn band_count(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    pub fn scheme(&self) -> BandScheme {
        self.scheme
    }

    pub fn band(&self, b: usize) -> std::ops::Range<usize> {
        self.starts[b]..self.starts[b + 1]
    }

    pub fn bands(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.band_count()).map(|b| self.band(b))
    }

    /// Band holding bin `k` of the full spectrum, folding negative frequencies.
    pub fn band_of(&self, k: usize) -> usize {
        let t = self.sequence_length;
        let folded = if k == 0 { 0 } else { k.min(t - k) };
        self.starts.partition_point(|&s| s <= folded) - 1
    }
}

fn check_band(partition: &BandPartition, index: usize) -> Result<(), SpectralError> {
    if index >= partition.band_count() {
        return Err(SpectralError::BandIndex { index, bands: partition.band_count() });
    }
    Ok(())
}

/// Time-domain reconstruction from only the bins of one band (and their mirrors).
pub fn band_reconstruction(
    spectrum: &ErrorSpectrum,
    partition: &BandPartition,
    band_index: usize,
) -> Result<Vec<f64>, SpectralError> {
    check_band(partition, band_index)?;
    if partition.sequence_length() != spectrum.source_length() {
        return Err(SpectralError::LengthMismatch(partition.sequence_length(), spectrum.source_length()));
    }
    let kept: Vec<Complex64> = spectrum
        .coefficients()
        .iter()
        .enumerate()
        .map(|(k, c)| if partition.band_of(k) == band_index { *c } else { Complex64::new(0.0, 0.0) })
        .collect();
    TransformPlan::new(kept.len()).inverse(&kept)
}

/// Mean absolute value of the band-limited reconstruction.
pub fn band_metric(seq: &ErrorSequence, partition: &BandPartition, band_index: usize) -> Result<f64, SpectralError> {
    check_band(partition, band_index)?;
    if band_index == 0 {
        return Ok(seq.mean());
    }
    let rec = band_reconstruction(&dft(seq), partition, band_index)?;
    Ok(rec.iter().map(|v| v.abs()).collect::<CompensatedSum>().value() / rec.len() as f64)
}

pub fn band_metrics(seq: &ErrorSequence, partition: &BandPartition) -> Result<Vec<f64>, SpectralError> {
    (0..partition.band_count()).map(|b| band_metric(seq, partition, b)).collect()
}

/// `|F(k)|` for `k = 0..=T/2`.
pub fn magnitude_spectrum(seq: &ErrorSequence) -> Vec<f64> {
    let spec = dft(seq);
    spec.coefficients()[..=seq.len() / 2].iter().map(|c| c.norm()).collect()
}

/// Bin-wise `|F_a(k)| / |F_b(k)|`; `None` where `|F_b(k)| < 1e-12`.
pub fn amplitude_ratio(a: &ErrorSequence, b: &ErrorSequence) -> Result<Vec<Option<f64>>, SpectralError> {
    if a.len() != b.len() {
        return Err(SpectralError::LengthMismatch(a.len(), b.len()));
    }
    Ok(magnitude_spectrum(a)
        .into_iter()
        .zip(magnitude_spectrum(b))
        .map(|(x, y)| (y >= 1e-12).then(|| x / y))
        .collect())
}

/// Scales every bin with `min(k, T−k) > k_thr` by `alpha`.
pub fn lowpass_error_model(spectrum: &ErrorSpectrum, k_thr: usize, alpha: f64) -> ErrorSpectrum {
    let t = spectrum.source_length();
    ErrorSpectrum {
        coefficients: spectrum
            .coefficients()
            .iter()
            .enumerate()
            .map(|(k, c)| if k.min(t - k) <= k_thr { *c } else { c * alpha })
            .collect(),
    }
}

pub fn time_energy(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).collect::<CompensatedSum>().value()
}

pub fn frequency_energy(spectrum: &ErrorSpectrum) -> f64 {
    spectrum.coefficients().iter().map(|c| c.norm_sqr()).collect::<CompensatedSum>().value()
        / spectrum.source_length() as f64
}

/// `(Σ ε_t², (1/T) Σ |F(k)|²)`.
pub fn parseval_check(seq: &ErrorSequence) -> (f64, f64) {
    (time_energy(seq.values()), frequency_energy(&dft(seq)))
}

/// Energy per band, counting mirrored bins; sums to the time-domain energy.
pub fn band_energies(spectrum: &ErrorSpectrum, partition: &BandPartition) -> Vec<f64> {
    let t = spectrum.source_length() as f64;
    let mut sums = vec![CompensatedSum::new(); partition.band_count()];
    for (k, c) in spectrum.coefficients().iter().enumerate() {
        sums[partition.band_of(k)].add(c.norm_sqr() / t);
    }
    sums.iter().map(|s| s.value()).collect()
}

/// Band energies of the signed relative-error trajectories `(pred − gt)/gt`,
/// summed over the pixels valid in every frame of both videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEnergy {
    pub per_band: Vec<f64>,
    pub pixel_count: usize,
}

impl BandEnergy {
    pub fn total(&self) -> f64 {
        self.per_band.iter().copied().collect::<CompensatedSum>().value()
    }

    pub fn lowest(&self, bands: usize) -> f64 {
        self.per_band[..bands].iter().sum()
    }

    pub fn highest(&self, bands: usize) -> f64 {
        self.per_band[self.per_band.len() - bands..].iter().sum()
    }

    pub fn fraction_lowest(&self, bands: usize) -> f64 {
        self.lowest(bands) / self.total()
    }

    pub fn fraction_highest(&self, bands: usize) -> f64 {
        self.highest(bands) / self.total()
    }
}

pub fn error_band_energy(
    pred_aligned: &DepthVideo,
    gt: &DepthVideo,
    partition: &BandPartition,
) -> Result<BandEnergy, SpectralError> {
    pred_aligned.ensure_same_shape(gt)?;
    let frames = gt.frame_count();
    if partition.sequence_length() != frames {
        return Err(SpectralError::LengthMismatch(partition.sequence_length(), frames));
    }
    let n = gt.pixel_count();
    let plan = TransformPlan::new(frames);
    let per_pixel: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut traj = Vec::with_capacity(frames);
            for t in 0..frames {
                let i = t * n + j;
                if !(pred_aligned.validity()[i] && gt.validity()[i]) {
                    return None;
                }
                let g = gt.values()[i] as f64;
                traj.push((pred_aligned.values()[i] as f64 - g) / g);
            }
            let spec = ErrorSpectrum { coefficients: plan.forward(&traj) };
            Some(band_energies(&spec, partition))
        })
        .collect();
    let mut sums = vec![CompensatedSum::new(); partition.band_count()];
    let mut pixel_count = 0;
    for energies in per_pixel.iter().flatten() {
        pixel_count += 1;
        for (s, e) in sums.iter_mut().zip(energies) {
            s.add(*e);
        }
    }
    if pixel_count == 0 {
        return Err(SpectralError::NoStablePixels);
    }
    Ok(BandEnergy { per_band: sums.iter().map(|s| s.value()).collect(), pixel_count })
}

/// `bin,frequency_hz,amplitude` rows for the half spectrum.
pub fn spectrum_csv(magnitudes: &[f64], sequence_length: usize, fps: f64) -> String {
    let mut out = String::from("bin,frequency_hz,amplitude\n");
    for (k, m) in magnitudes.iter().enumerate() {
        out.push_str(&format!("{k},{},{m}\n", k as f64 * fps / sequence_length as f64));
    }
    out
}

/// `bin,frequency_hz,ratio` rows; missing ratios are left empty.
pub fn ratio_csv(ratios: &[Option<f64>], sequence_length: usize, fps: f64) -> String {
    let mut out = String::from("bin,frequency_hz,ratio\n");
    for (k, r) in ratios.iter().enumerate() {
        let f = k as f64 * fps / sequence_length as f64;
        match r {
            Some(r) => out.push_str(&format!("{k},{f},{r}\n")),
            None => out.push_str(&format!("{k},{f},\n")),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: usize,
    pub first_bin: usize,
    pub last_bin: usize,
    pub value: f64,
}

pub fn band_rows(partition: &BandPartition, values: &[f64]) -> Vec<BandRow> {
    partition
        .bands()
        .zip(values)
        .enumerate()
        .map(|(b, (r, v))| BandRow { band: b, first_bin: r.start, last_bin: r.end - 1, value: *v })
        .collect()
}

pub fn band_csv(rows: &[BandRow]) -> String {
    let mut out = String::from("band,first_bin,last_bin,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.band, r.first_bin, r.last_bin, r.value));
    }
    out
}

/// One row of per-band values with one column per band, `F0` first.
pub fn band_table_csv(metric: MetricName, values: &[f64]) -> String {
    let header: Vec<String> = (0..values.len()).map(|b| format!("F{b}")).collect();
    let row: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("metric,{}\n{},{}\n", header.join(","), metric.as_str(), row.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn seq(values: Vec<f64>) -> ErrorSequence {
        ErrorSequence::new(values, MetricName::Absrel).unwrap()
    }

    fn random_seq(rng: &mut impl Rng, t: usize) -> ErrorSequence {
        seq((0..t).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    fn close(a: Complex64, b: Complex64, scale: f64) -> bool {
        (a - b).norm() <= 1e-9 * scale.max(1.0)
    }

    #[test]
    fn constant_sequence_is_dc_only() {
        let s = dft(&seq(vec![0.3; 10]));
        assert!((s.coefficients()[0].re - 3.0).abs() < 1e-12);
        assert!(s.coefficients()[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn single_tone() {
        let t = 16;
        let values: Vec<f64> = (0..t).map(|n| (2.0 * PI * 3.0 * n as f64 / t as f64).cos() + 1.0).collect();
        let s = dft(&seq(values));
        for (k, c) in s.coefficients().iter().enumerate() {
            let expected = match k {
                0 => 16.0,
                3 | 13 => 8.0,
                _ => 0.0,
            };
            assert!((c.norm() - expected).abs() < 1e-9, "bin {k}");
        }
    }

    #[test]
    fn fast_matches_naive_on_prime_length() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let s = random_seq(&mut rng, 37);
        let fast = dft(&s);
        let slow = naive::dft(s.values());
        let scale = slow.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (a, b) in fast.coefficients().iter().zip(&slow) {
            assert!(close(*a, *b, scale));
        }
        assert!(fast.symmetry_error() < 1e-9);
    }

    #[test]
    fn inverse_round_trip_and_dc_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s = random_seq(&mut rng, 50);
        let back = idft(&dft(&s)).unwrap();
        for (a, b) in back.iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 8];
        coeffs[0] = Complex64::new(8.0, 0.0);
        let ones = idft(&ErrorSpectrum::from_coefficients(coeffs).unwrap()).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn band_zeroed_inverse_matches_naive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = random_seq(&mut rng, 64);
        let p = BandPartition::new(64, 6, BandScheme::Exponential).unwrap();
        let spec = dft(&s);
        for b in 0..6 {
            let fast = band_reconstruction(&spec, &p, b).unwrap();
            let zeroed: Vec<Complex64> = naive::dft(s.values())
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let f = k.min(64 - k);
                    if p.band(b).contains(&f) { *c } else { Complex64::new(0.0, 0.0) }
                })
                .collect();
            let slow = naive::idft(&zeroed);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b.re).abs() < 1e-9 && b.im.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn asymmetric_spectrum_rejected() {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 4];
        coeffs[1] = Complex64::new(0.0, 4.0);
        let spec = ErrorSpectrum::from_coefficients(coeffs).unwrap();
        assert!(matches!(idft(&spec), Err(SpectralError::Symmetry { .. })));
    }

    #[test]
    fn exponential_partition_shapes() {
        let p = BandPartition::new(8, 2, BandScheme::Exponential).unwrap();
        assert_eq!(p.bands().collect::<Vec<_>>(), vec![0..1, 1..5]);
        let p = BandPartition::new(438, 11, BandScheme::Exponential).unwrap();
        assert_eq!(p.band_count(), 11);
        assert_eq!(p.band(0), 0..1);
        assert_eq!(p.bands().map(|r| r.len()).sum::<usize>(), 220);
        let p = BandPartition::new(220, 11, BandScheme::Exponential).unwrap();
        let starts: Vec<usize> = p.bands().map(|r| r.start).collect();
        assert_eq!(starts, vec![0, 1, 2, 3, 4, 7, 10, 17, 27, 43, 69]);
        assert_eq!(p.band(10).end, 111);
        assert!(matches!(
            BandPartition::new(8, 6, BandScheme::Exponential),
            Err(SpectralError::InfeasiblePartition { .. })
        ));
    }

    #[test]
    fn custom_and_linear_partitions() {
        let p = BandPartition::custom(20, &[0, 1, 4]).unwrap();
        assert_eq!(p.bands().collect::<Vec<_>>(), vec![0..1, 1..4, 4..11]);
        assert!(BandPartition::custom(20, &[0, 2]).is_err());
        assert!(BandPartition::custom(20, &[0, 1, 11]).is_err());
        let p = BandPartition::new(20, 3, BandScheme::Linear).unwrap();
        assert_eq!(p.bands().collect::<Vec<_>>(), vec![0..1, 1..6, 6..11]);
    }

    #[test]
    fn band_metrics_behave() {
        let t = 32;
        let p = BandPartition::new(t, 5, BandScheme::Exponential).unwrap();
        let values: Vec<f64> = (0..t).map(|n| 1.0 + 0.5 * (2.0 * PI * 3.0 * n as f64 / t as f64).sin()).collect();
        let s = seq(values);
        let m = band_metrics(&s, &p).unwrap();
        assert!((m[0] - s.mean()).abs() < 1e-12);
        let tone_band = p.band_of(3);
        for (b, v) in m.iter().enumerate().skip(1) {
            if b == tone_band {
                assert!(*v > 0.1);
            } else {
                assert!(v.abs() < 1e-12, "band {b}: {v}");
            }
        }
        assert!(matches!(band_metric(&s, &p, 5), Err(SpectralError::BandIndex { .. })));
    }

    #[test]
    fn magnitudes_and_ratios() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = random_seq(&mut rng, 21);
        let mags = magnitude_spectrum(&a);
        assert_eq!(mags.len(), 11);
        for (m, c) in mags.iter().zip(naive::dft(a.values())) {
            assert!((m - c.norm()).abs() < 1e-9);
        }
        let doubled = seq(a.values().iter().map(|v| 2.0 * v).collect());
        for r in amplitude_ratio(&doubled, &a).unwrap() {
            assert!((r.unwrap() - 2.0).abs() < 1e-9);
        }
        let constant = seq(vec![1.0; 21]);
        let r = amplitude_ratio(&a, &constant).unwrap();
        assert!(r[0].is_some() && r[1..].iter().all(|x| x.is_none()));
        assert!(amplitude_ratio(&a, &seq(vec![1.0; 4])).is_err());

        let t = 24;
        let two: Vec<f64> = (0..t)
            .map(|n| {
                let x = n as f64 / t as f64;
                2.0 + (2.0 * PI * 2.0 * x).cos() + 0.5 * (2.0 * PI * 7.0 * x).sin()
            })
            .collect();
        let mags = magnitude_spectrum(&seq(two));
        assert_eq!(mags[1..].iter().filter(|m| **m > 1e-9).count(), 2);
    }

    #[test]
    fn lowpass_model_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let s = random_seq(&mut rng, 30);
        let spec = dft(&s);
        assert_eq!(lowpass_error_model(&spec, 4, 1.0), spec);
        let dc = idft(&lowpass_error_model(&spec, 0, 0.0)).unwrap();
        assert!(dc.iter().all(|v| (v - s.mean()).abs() < 1e-12));
        let half = lowpass_error_model(&spec, 3, 0.5);
        assert!(frequency_energy(&half) <= frequency_energy(&spec));
        assert_eq!(half.coefficients()[0], spec.coefficients()[0]);
        assert!(half.symmetry_error() < 1e-12);
    }

    #[test]
    fn parseval_small_cases() {
        let (a, b) = parseval_check(&seq(vec![1.0, 0.0, 0.0, 0.0]));
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (a, b) = parseval_check(&seq(vec![1.0; 4]));
        assert!((a - 4.0).abs() < 1e-12 && (b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn band_of_folds_mirrors() {
        let p = BandPartition::new(10, 3, BandScheme::Linear).unwrap();
        assert_eq!(p.band_of(0), 0);
        assert_eq!(p.band_of(1), p.band_of(9));
        assert_eq!(p.band_of(5), 2);
    }

    #[test]
    fn csv_layouts() {
        let csv = spectrum_csv(&[1.0, 0.5], 4, 2.0);
        assert_eq!(csv, "bin,frequency_hz,amplitude\n0,0,1\n1,0.5,0.5\n");
        assert_eq!(ratio_csv(&[None], 4, 1.0), "bin,frequency_hz,ratio\n0,0,\n");
    }

    proptest! {
        #[test]
        fn parseval_and_band_sum(values in prop::collection::vec(0.0f64..10.0, 2..200), bands in 2usize..6) {
            let s = seq(values.clone());
            let (a, b) = parseval_check(&s);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300));
            let t = values.len();
            prop_assume!(bands <= t / 2 + 1);
            let p = BandPartition::new(t, bands, BandScheme::Exponential).unwrap();
            let spec = dft(&s);
            let mut total = vec![0.0; t];
            for b in 0..p.band_count() {
                for (acc, v) in total.iter_mut().zip(band_reconstruction(&spec, &p, b).unwrap()) {
                    *acc += v;
                }
            }
            for (x, y) in total.iter().zip(&values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let energies = band_energies(&spec, &p);
            prop_assert!((energies.iter().sum::<f64>() - a).abs() <= 1e-9 * a.max(1.0));
            prop_assert!((band_metric(&s, &p, 0).unwrap() - s.mean()).abs() < 1e-12);
        }

        #[test]
        fn partition_covers_half_spectrum(t in 2usize..600, b in 2usize..14) {
            match BandPartition::new(t, b, BandScheme::Exponential) {
                Ok(p) => {
                    prop_assert_eq!(p.band(0), 0..1);
                    prop_assert_eq!(p.bands().map(|r| r.len()).sum::<usize>(), t / 2 + 1);
                    prop_assert!(p.bands().all(|r| !r.is_empty()));
                }
                Err(SpectralError::InfeasiblePartition { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn lowpass_never_adds_energy(values in prop::collection::vec(0.0f64..5.0, 2..100), alpha in 0.0f64..=1.0, k in 0usize..50) {
            let s = seq(values);
            let spec = dft(&s);
            let k = k.min(s.len() / 2);
            let out = lowpass_error_model(&spec, k, alpha);
            prop_assert!(frequency_energy(&out) <= frequency_energy(&spec) * (1.0 + 1e-12));
            prop_assert_eq!(out.coefficients()[0], spec.coefficients()[0]);
            let rec = idft(&out).unwrap();
            let mean = rec.iter().sum::<f64>() / rec.len() as f64;
            prop_assert!((mean - s.mean()).abs() < 1e-9);
        }
    }
}
