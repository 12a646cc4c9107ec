//! Discrete Stockwell transform (S-transform) and heatmap export.
//!
//! Frequency-domain formulation with circular spectrum indexing: for output
//! row n >= 1,
//!
//! ```text
//! S[j, n] = sum_m H[(m + n) mod N] * exp(-2 pi^2 m^2 / n^2) * exp(2 pi i m j / N)
//! ```
//!
//! where `H` is the (1/N)-normalized DFT of the signal, and the
//! zero-frequency row is the signal mean. Under these conventions the time
//! average of every row equals the corresponding Fourier coefficient,
//! which is the primary correctness oracle.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StockwellError {
    #[error("signal too short: have {0}, need at least 8")]
    TooShort(usize),
    #[error("non-finite value in signal")]
    NonFinite,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Time-frequency coefficients for rows n = 0..=N/2.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub n_freq: usize,
    pub n_time: usize,
    /// Row-major complex coefficients S[n][j].
    pub complex_store: Vec<Complex<f64>>,
    /// |S| elementwise, same layout.
    pub magnitudes: Vec<f64>,
    /// Frequency of each row in cycles per sample (n / N).
    pub freq_bins: Vec<f64>,
}

impl Spectrogram {
    pub fn coeff(&self, freq_row: usize, time: usize) -> Complex<f64> {
        self.complex_store[freq_row * self.n_time + time]
    }

    pub fn magnitude(&self, freq_row: usize, time: usize) -> f64 {
        self.magnitudes[freq_row * self.n_time + time]
    }

    pub fn row_magnitudes(&self, freq_row: usize) -> &[f64] {
        &self.magnitudes[freq_row * self.n_time..(freq_row + 1) * self.n_time]
    }
}

/// Compute the discrete S-transform of a real signal.
pub fn s_transform(signal: &[f64]) -> Result<Spectrogram, StockwellError> {
    let n = signal.len();
    if n < 8 {
        return Err(StockwellError::TooShort(n));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(StockwellError::NonFinite);
    }

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    // Normalized DFT: H[k] = (1/N) sum_t x[t] e^{-2 pi i t k / N}.
    let mut spectrum: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut spectrum);
    for c in &mut spectrum {
        *c /= n as f64;
    }

    let n_freq = n / 2 + 1;
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut complex_store = vec![Complex::new(0.0, 0.0); n_freq * n];
    for j in 0..n {
        complex_store[j] = Complex::new(mean, 0.0);
    }

    let mut row = vec![Complex::new(0.0, 0.0); n];
    for freq in 1..n_freq {
        for (m, slot) in row.iter_mut().enumerate() {
            let gauss = (-2.0 * PI * PI * (m * m) as f64 / (freq * freq) as f64).exp();
            *slot = spectrum[(m + freq) % n] * gauss;
        }
        // rustfft's inverse is unnormalized, which is exactly the sum over
        // m with the e^{+2 pi i m j / N} kernel.
        ifft.process(&mut row);
        complex_store[freq * n..(freq + 1) * n].copy_from_slice(&row);
    }

    let magnitudes = complex_store.iter().map(|c| c.norm()).collect();
    let freq_bins = (0..n_freq).map(|f| f as f64 / n as f64).collect();
    Ok(Spectrogram {
        n_freq,
        n_time: n,
        complex_store,
        magnitudes,
        freq_bins,
    })
}

/// Render the magnitude matrix as a grayscale PNG, low frequencies at the
/// bottom, normalized by the per-image maximum (an all-zero spectrogram
/// yields a uniform image).
pub fn export_heatmap(spec: &Spectrogram, path: impl AsRef<Path>) -> Result<(), StockwellError> {
    let path = path.as_ref();
    let peak = spec.magnitudes.iter().cloned().fold(0.0f64, f64::max);
    let mut img = image::GrayImage::new(spec.n_time as u32, spec.n_freq as u32);
    for freq in 0..spec.n_freq {
        let y = (spec.n_freq - 1 - freq) as u32;
        for t in 0..spec.n_time {
            let v = if peak > 0.0 {
                (spec.magnitude(freq, t) / peak * 255.0).round() as u8
            } else {
                0
            };
            img.put_pixel(t as u32, y, image::Luma([v]));
        }
    }
    let file = std::fs::File::create(path).map_err(|source| StockwellError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = std::io::BufWriter::new(file);
    img.write_to(&mut writer, image::ImageFormat::Png)
        .map_err(|e| StockwellError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        })
}

/// Seeded uniform samples on [-0.5, 0.5], the synthetic reference signal
/// for comparing against stock differences.
pub fn noise_reference(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
}
