//! OFDM radar channel synthesis, periodogram and range-angle imaging.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ImageGrid, Scene};

/// Speed of light convention used throughout.
pub const C0: f64 = 3.0e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub n_sub: usize,
    pub n_symb: usize,
    /// OFDM symbol duration including cyclic prefix.
    pub symbol_duration_s: f64,
    pub array_x: usize,
    pub array_y: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
    /// `(min, max)` range covered by the heatmap rows, meters.
    pub range_window: (f64, f64),
    pub heatmap_rows: usize,
    pub heatmap_cols: usize,
    /// Azimuth span of the heatmap columns, centered on boresight.
    pub azimuth_fov_deg: f64,
    /// Std of the complex channel noise per (subcarrier, symbol, antenna).
    pub noise_sigma: f64,
    /// Zero-padding factor of the range transform.
    pub range_oversample: usize,
    /// Hann taper across subcarriers and azimuth elements when imaging.
    pub taper: bool,
}

impl Default for RadioConfig {
    /// Full-size geometry: 800 MHz at 28 GHz, 16x16 array, 480x640 bins.
    fn default() -> Self {
        let n_sub = 256;
        let bandwidth_hz = 800e6;
        Self {
            bandwidth_hz,
            carrier_hz: 28e9,
            n_sub,
            n_symb: 8,
            symbol_duration_s: 1.25 * n_sub as f64 / bandwidth_hz,
            array_x: 16,
            array_y: 16,
            element_spacing: 0.5,
            range_window: (5.0, 25.0),
            heatmap_rows: 480,
            heatmap_cols: 640,
            azimuth_fov_deg: 90.0,
            noise_sigma: 1.0,
            range_oversample: 4,
            taper: true,
        }
    }
}

impl RadioConfig {
    /// Desk-scale geometry: same radio, 48x64 heatmap.
    pub fn desk() -> Self {
        Self { heatmap_rows: 48, heatmap_cols: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("radio.bandwidth_hz", "must be positive"));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::config("radio.carrier_hz", "must be positive"));
        }
        if self.n_sub < 2 || self.n_symb < 2 {
            return Err(Error::config("radio.n_sub/n_symb", "need at least 2 subcarriers and 2 symbols"));
        }
        if self.array_x == 0 || self.array_y == 0 {
            return Err(Error::config("radio.array", "array dimensions must be positive"));
        }
        if self.heatmap_rows == 0 || self.heatmap_cols == 0 {
            return Err(Error::config("radio.heatmap_dims", "heatmap dims must be positive"));
        }
        let (lo, hi) = self.range_window;
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::config("radio.range_window", "need 0 <= min < max"));
        }
        if hi > self.unambiguous_range() {
            return Err(Error::config(
                "radio.range_window",
                format!("max {hi} m exceeds unambiguous range {} m", self.unambiguous_range()),
            ));
        }
        if !(self.azimuth_fov_deg > 0.0 && self.azimuth_fov_deg < 180.0) {
            return Err(Error::config("radio.azimuth_fov_deg", "must lie in (0, 180)"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("radio.noise_sigma", "must be nonnegative"));
        }
        if self.range_oversample == 0 {
            return Err(Error::config("radio.range_oversample", "must be >= 1"));
        }
        if !(self.symbol_duration_s > 0.0) {
            return Err(Error::config("radio.symbol_duration_s", "must be positive"));
        }
        Ok(())
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.n_sub as f64
    }

    pub fn range_resolution(&self) -> f64 {
        range_resolution(self.bandwidth_hz)
    }

    pub fn unambiguous_range(&self) -> f64 {
        self.n_sub as f64 * self.range_resolution()
    }

    pub fn n_antennas(&self) -> usize {
        self.array_x * self.array_y
    }

    pub fn heatmap_dims(&self) -> (usize, usize) {
        (self.heatmap_rows, self.heatmap_cols)
    }

    /// Meters per heatmap row.
    pub fn row_height(&self) -> f64 {
        (self.range_window.1 - self.range_window.0) / self.heatmap_rows as f64
    }

    /// Degrees per heatmap column.
    pub fn col_width(&self) -> f64 {
        self.azimuth_fov_deg / self.heatmap_cols as f64
    }

    pub fn range_of_row(&self, row: f64) -> f64 {
        self.range_window.0 + row * self.row_height()
    }

    pub fn row_of_range(&self, range: f64) -> f64 {
        (range - self.range_window.0) / self.row_height()
    }

    pub fn azimuth_of_col(&self, col: f64) -> f64 {
        -self.azimuth_fov_deg / 2.0 + col * self.col_width()
    }

    pub fn col_of_azimuth(&self, azimuth_deg: f64) -> f64 {
        (azimuth_deg + self.azimuth_fov_deg / 2.0) / self.col_width()
    }

    /// Nearest heatmap bin of a polar coordinate, `None` outside the grid.
    pub fn bin_of(&self, range: f64, azimuth_deg: f64) -> Option<(usize, usize)> {
        let row = self.row_of_range(range).round();
        let col = self.col_of_azimuth(azimuth_deg).round();
        let inside = row >= 0.0
            && col >= 0.0
            && (row as usize) < self.heatmap_rows
            && (col as usize) < self.heatmap_cols;
        inside.then_some((row as usize, col as usize))
    }

    /// Polar coordinate of a (possibly fractional) heatmap bin.
    pub fn coords_of_bin(&self, row: f64, col: f64) -> (f64, f64) {
        (self.range_of_row(row), self.azimuth_of_col(col))
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.carrier_hz
    }
}

/// Range resolution `c0 / 2B`.
pub fn range_resolution(bandwidth_hz: f64) -> f64 {
    C0 / (2.0 * bandwidth_hz)
}

/// Estimated channel `H[k, n, a]`: subcarrier `k`, symbol `n`, antenna `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub n_sub: usize,
    pub n_symb: usize,
    pub n_ant: usize,
    pub data: Vec<Complex64>,
}

impl Channel {
    pub fn zeros(n_sub: usize, n_symb: usize, n_ant: usize) -> Self {
        Self { n_sub, n_symb, n_ant, data: vec![Complex64::new(0.0, 0.0); n_sub * n_symb * n_ant] }
    }

    #[inline]
    pub fn idx(&self, k: usize, n: usize, a: usize) -> usize {
        (k * self.n_symb + n) * self.n_ant + a
    }

    pub fn get(&self, k: usize, n: usize, a: usize) -> Complex64 {
        self.data[self.idx(k, n, a)]
    }

    fn check(&self, op: &'static str) -> Result<()> {
        if self.data.len() != self.n_sub * self.n_symb * self.n_ant {
            return Err(Error::shape(op, format!(
                "channel payload {} != {}x{}x{}",
                self.data.len(), self.n_sub, self.n_symb, self.n_ant
            )));
        }
        if self.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!("{op}: channel entries")));
        }
        Ok(())
    }
}

#[inline]
fn phasor(cycles: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * cycles)
}

/// Sum of per-scatterer phasors (Doppler over symbols, two-way delay over
/// subcarriers, steering over the horizontal array axis) plus complex noise.
pub fn synth_channel(scene: &Scene, radio: &RadioConfig, seed: u64) -> Result<Channel> {
    radio.validate()?;
    let (n_sub, n_symb, n_ant) = (radio.n_sub, radio.n_symb, radio.n_antennas());
    let mut ch = Channel::zeros(n_sub, n_symb, n_ant);
    let df = radio.subcarrier_spacing();
    let unambiguous = radio.unambiguous_range();
    let mut rd = vec![Complex64::new(0.0, 0.0); n_sub * n_symb];
    let mut steer = vec![Complex64::new(0.0, 0.0); n_ant];
    for s in &scene.scatterers {
        let range = s.range();
        if range >= unambiguous {
            return Err(Error::OutOfRange(format!(
                "scatterer at {range:.3} m beyond unambiguous range {unambiguous:.3} m"
            )));
        }
        let doppler_hz = 2.0 * s.radial_speed * radio.carrier_hz / C0;
        let delay_cycles = 2.0 * range * df / C0;
        let sin_az = s.azimuth_deg().to_radians().sin();
        for k in 0..n_sub {
            let pk = phasor(k as f64 * delay_cycles) * s.amplitude;
            for n in 0..n_symb {
                rd[k * n_symb + n] = pk * phasor(n as f64 * radio.symbol_duration_s * doppler_hz);
            }
        }
        for iy in 0..radio.array_y {
            for ix in 0..radio.array_x {
                steer[iy * radio.array_x + ix] = phasor(radio.element_spacing * ix as f64 * sin_az);
            }
        }
        for (kn, &base) in rd.iter().enumerate() {
            let row = &mut ch.data[kn * n_ant..(kn + 1) * n_ant];
            for (h, &st) in row.iter_mut().zip(&steer) {
                *h += base * st;
            }
        }
    }
    if radio.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, radio.noise_sigma / std::f64::consts::SQRT_2).expect("validated sigma");
        for h in &mut ch.data {
            h.re += normal.sample(&mut rng);
            h.im += normal.sample(&mut rng);
        }
    }
    Ok(ch)
}

/// `P[r, d]` with range index `r < n_sub` and Doppler index `d < n_symb`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub n_range: usize,
    pub n_doppler: usize,
    pub data: Vec<f64>,
}

impl RangeDopplerMap {
    pub fn get(&self, r: usize, d: usize) -> f64 {
        self.data[r * self.n_doppler + d]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.data);
        (i / self.n_doppler, i % self.n_doppler)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Periodogram of one antenna:
/// `P[r, d] = |sum_m (sum_p H[p, m] e^{-j2pi p r / N_sub}) e^{+j2pi m d / N_symb}|^2`,
/// a forward FFT across subcarriers then an unnormalized inverse FFT across symbols.
pub fn periodogram(channel: &Channel, antenna_index: usize) -> Result<RangeDopplerMap> {
    channel.check("periodogram")?;
    if antenna_index >= channel.n_ant {
        return Err(Error::shape("periodogram", format!(
            "antenna {antenna_index} out of {}", channel.n_ant
        )));
    }
    let (ns, nm) = (channel.n_sub, channel.n_symb);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(ns);
    let inv = planner.plan_fft_inverse(nm);

    // grid[r * nm + m]
    let mut grid = vec![Complex64::new(0.0, 0.0); ns * nm];
    let mut col = vec![Complex64::new(0.0, 0.0); ns];
    for m in 0..nm {
        for (p, c) in col.iter_mut().enumerate() {
            *c = channel.get(p, m, antenna_index);
        }
        fwd.process(&mut col);
        for (r, c) in col.iter().enumerate() {
            grid[r * nm + m] = *c;
        }
    }
    for row in grid.chunks_mut(nm) {
        inv.process(row);
    }
    Ok(RangeDopplerMap { n_range: ns, n_doppler: nm, data: grid.iter().map(|z| z.norm_sqr()).collect() })
}

/// Nonnegative range-azimuth power map. Row `i` sits at
/// `range_min + i * row_height`, column `j` at `-fov/2 + j * col_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.data);
        (i / self.cols, i % self.cols)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Log-compressed copy in `[0, 1]`: 0 dB relative to the peak maps to 1,
    /// `-dynamic_range_db` and below map to 0.
    pub fn to_db_unit(&self, dynamic_range_db: f64) -> Vec<f64> {
        let peak = self.max();
        if peak <= 0.0 {
            return vec![0.0; self.data.len()];
        }
        self.data
            .iter()
            .map(|&p| {
                let db = 10.0 * (p.max(f64::MIN_POSITIVE) / peak).log10();
                ((db + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Local maxima over the 8-neighbourhood, strongest first.
    pub fn local_maxima(&self) -> Vec<(usize, usize)> {
        let mut peaks = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.get(r, c);
                let mut is_peak = v > 0.0;
                'n: for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= self.rows as i64 || cc >= self.cols as i64 {
                            continue;
                        }
                        if self.get(rr as usize, cc as usize) > v {
                            is_peak = false;
                            break 'n;
                        }
                    }
                }
                if is_peak {
                    peaks.push((r, c));
                }
            }
        }
        peaks.sort_by(|a, b| self.get(b.0, b.1).total_cmp(&self.get(a.0, a.1)));
        peaks
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Range-azimuth image: coherent sum over symbols and elevation elements,
/// zero-padded FFT across subcarriers, steered sum across the horizontal array
/// on a uniform azimuth grid, magnitude squared, rows resampled onto the range window.
pub fn range_angle_heatmap(channel: &Channel, radio: &RadioConfig) -> Result<Heatmap> {
    channel.check("range_angle_heatmap")?;
    if channel.n_sub != radio.n_sub || channel.n_symb != radio.n_symb || channel.n_ant != radio.n_antennas() {
        return Err(Error::shape("range_angle_heatmap", format!(
            "channel {}x{}x{} vs config {}x{}x{}",
            channel.n_sub, channel.n_symb, channel.n_ant, radio.n_sub, radio.n_symb, radio.n_antennas()
        )));
    }
    if radio.array_x < 2 {
        return Err(Error::shape("range_angle_heatmap", "need >= 2 elements along azimuth"));
    }
    let (ns, nx) = (radio.n_sub, radio.array_x);
    let sub_taper = if radio.taper { hann(ns) } else { vec![1.0; ns] };
    let el_taper = if radio.taper { hann(nx) } else { vec![1.0; nx] };

    // x[ix][k]: summed over symbols and elevation rows.
    let mut x = vec![vec![Complex64::new(0.0, 0.0); ns]; nx];
    for k in 0..ns {
        for n in 0..radio.n_symb {
            let base = channel.idx(k, n, 0);
            for iy in 0..radio.array_y {
                for (ix, xs) in x.iter_mut().enumerate() {
                    xs[k] += channel.data[base + iy * nx + ix];
                }
            }
        }
    }
    let nfft = ns * radio.range_oversample;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let bin_m = radio.range_resolution() / radio.range_oversample as f64;
    let (rmin, rmax) = radio.range_window;
    let b_lo = (rmin / bin_m).floor() as usize;
    let b_hi = ((rmax / bin_m).ceil() as usize + 1).min(nfft - 1);
    let nb = b_hi - b_lo + 1;

    let mut profiles = vec![vec![Complex64::new(0.0, 0.0); nb]; nx];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for ix in 0..nx {
        buf.fill(Complex64::new(0.0, 0.0));
        for k in 0..ns {
            buf[k] = x[ix][k] * sub_taper[k];
        }
        fft.process(&mut buf);
        profiles[ix].copy_from_slice(&buf[b_lo..=b_hi]);
    }

    let cols = radio.heatmap_cols;
    let mut power = vec![0.0; nb * cols];
    for j in 0..cols {
        let sin_az = radio.azimuth_of_col(j as f64).to_radians().sin();
        let weights: Vec<Complex64> = (0..nx)
            .map(|ix| phasor(-radio.element_spacing * ix as f64 * sin_az) * el_taper[ix])
            .collect();
        for b in 0..nb {
            let mut acc = Complex64::new(0.0, 0.0);
            for ix in 0..nx {
                acc += profiles[ix][b] * weights[ix];
            }
            power[b * cols + j] = acc.norm_sqr();
        }
    }

    let mut hm = Heatmap::zeros(radio.heatmap_rows, cols);
    for i in 0..radio.heatmap_rows {
        let fb = radio.range_of_row(i as f64) / bin_m - b_lo as f64;
        let b0 = (fb.floor().max(0.0) as usize).min(nb - 1);
        let b1 = (b0 + 1).min(nb - 1);
        let t = (fb - b0 as f64).clamp(0.0, 1.0);
        for j in 0..cols {
            hm.data[i * cols + j] = (1.0 - t) * power[b0 * cols + j] + t * power[b1 * cols + j];
        }
    }
    Ok(hm)
}

/// Scene to heatmap in one call.
pub fn simulate_heatmap(scene: &Scene, radio: &RadioConfig, seed: u64) -> Result<Heatmap> {
    range_angle_heatmap(&synth_channel(scene, radio, seed)?, radio)
}

/// Normalized Gaussian point-spread kernel of an antenna beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamKernel {
    pub size: usize,
    pub beamwidth_px: f64,
    pub radius: usize,
    pub data: Vec<f64>,
}

impl BeamKernel {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    /// Number of center-row entries at or above half the peak.
    pub fn half_max_width(&self) -> usize {
        let peak = self.get(self.radius, self.radius);
        (0..self.size).filter(|&c| self.get(self.radius, c) >= 0.5 * peak).count()
    }
}

/// FWHM-to-sigma factor `2 sqrt(2 ln 2)`.
const FWHM_PER_SIGMA: f64 = 2.355;

/// Gaussian `e^{-(x^2+y^2)/(2w^2)}` with `w = delta_phi * px_per_deg / 2.355`,
/// truncated at `3w` and scaled to unit sum.
pub fn beam_kernel(delta_phi_deg: f64, pixels_per_degree: f64, image_dims: (usize, usize)) -> Result<BeamKernel> {
    if !(delta_phi_deg > 0.0 && delta_phi_deg.is_finite()) {
        return Err(Error::config("beam_kernel.delta_phi", "must be positive"));
    }
    if !(pixels_per_degree > 0.0 && pixels_per_degree.is_finite()) {
        return Err(Error::config("beam_kernel.pixels_per_degree", "must be positive"));
    }
    let w = delta_phi_deg * pixels_per_degree / FWHM_PER_SIGMA;
    let radius = ((3.0 * w).ceil() as usize).max(1);
    let size = 2 * radius + 1;
    if size > image_dims.0 || size > image_dims.1 {
        return Err(Error::shape("beam_kernel", format!(
            "kernel {size}x{size} larger than image {}x{}", image_dims.0, image_dims.1
        )));
    }
    let mut data = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let dy = r as f64 - radius as f64;
            let dx = c as f64 - radius as f64;
            data.push((-(dx * dx + dy * dy) / (2.0 * w * w)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Ok(BeamKernel { size, beamwidth_px: w, radius, data })
}

#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Per-channel 2-D convolution with mirror padding (edge not repeated).
pub fn blur(image: &ImageGrid, kernel: &BeamKernel) -> Result<ImageGrid> {
    if kernel.radius >= image.height || kernel.radius >= image.width {
        return Err(Error::shape("blur", format!(
            "kernel radius {} does not fit image {}x{}", kernel.radius, image.height, image.width
        )));
    }
    let (h, w, r) = (image.height, image.width, kernel.radius as i64);
    let mut out = ImageGrid::zeros(image.channels, h, w);
    for c in 0..image.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..kernel.size {
                    let sy = reflect(y as i64 - (ky as i64 - r), h);
                    for kx in 0..kernel.size {
                        let sx = reflect(x as i64 - (kx as i64 - r), w);
                        acc += kernel.data[ky * kernel.size + kx] * image.get(c, sy, sx);
                    }
                }
                out.set(c, y, x, acc);
            }
        }
    }
    Ok(out)
}
