//! Kolmogorov phase screens, a Hufnagel-Valley strength profile, and the
//! effective slit-qudit channel of a screen ensemble.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::channels::KrausChannel;
use crate::error::{Error, Result};
use crate::numkernel::{c, ComplexMatrix, C64};

/// Highest altitude accepted by [`cn2_profile`].
pub const MAX_ALTITUDE: f64 = 20_000.0;
/// Structure-function prefactor `2 (24/5 Gamma(6/5))^(5/6)`.
pub const KOLMOGOROV_SF_COEFF: f64 = 6.883_877_182_293_811;
/// Kolmogorov phase PSD coefficient for spatial frequency in cycles per metre.
pub const PSD_COEFF: f64 = 0.023;
/// Subharmonic levels added to the FFT screen.
pub const SUBHARMONIC_LEVELS: u32 = 3;
/// Ground-layer constant of the desk-scale presets, three times the
/// standard HV-5/7 value.
pub const DESK_SCALE_GROUND_CONSTANT: f64 = 5.1e-14;

/// Hufnagel-Valley profile constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HvModel {
    /// RMS upper-atmosphere wind speed, m/s.
    pub wind_speed: f64,
    /// Ground-layer strength `A`, m^(-2/3).
    pub ground_constant: f64,
}

impl Default for HvModel {
    fn default() -> Self {
        Self {
            wind_speed: 21.0,
            ground_constant: 1.7e-14,
        }
    }
}

impl HvModel {
    pub fn cn2(&self, h: f64) -> Result<f64> {
        if !(0.0..=MAX_ALTITUDE).contains(&h) {
            return Err(Error::OutOfRange {
                what: "altitude must lie in [0, 20000] m",
                value: h,
            });
        }
        let v = self.wind_speed / 27.0;
        Ok(0.00594 * v * v * (1e-5 * h).powi(10) * (-h / 1000.0).exp()
            + 2.7e-16 * (-h / 1500.0).exp()
            + self.ground_constant * (-h / 100.0).exp())
    }
}

/// `Cn^2(h)` with the standard HV-5/7 constants (`v = 21 m/s`,
/// `A = 1.7e-14`).
pub fn cn2_profile(h: f64) -> Result<f64> {
    HvModel::default().cn2(h)
}

/// Plane-wave Fried parameter `(0.423 k^2 Cn^2 L)^(-3/5)`.
pub fn fried_parameter(cn2: f64, path_length: f64, wavelength: f64) -> f64 {
    let k = 2.0 * PI / wavelength;
    (0.423 * k * k * cn2 * path_length).powf(-0.6)
}

/// Slit aperture, centred on the screen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlitGeometry {
    pub d: usize,
    pub width: f64,
    pub pitch: f64,
    pub height: f64,
}

impl Default for SlitGeometry {
    fn default() -> Self {
        Self {
            d: 4,
            width: 0.006,
            pitch: 0.012,
            height: 0.006,
        }
    }
}

impl SlitGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 slits, got {}",
                self.d
            )));
        }
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.width) && ok(self.pitch) && ok(self.height)) {
            return Err(Error::InvalidParameter(
                "slit dimensions must be positive".into(),
            ));
        }
        if self.width >= self.pitch {
            return Err(Error::GeometryMismatch(format!(
                "slit width {} must be smaller than pitch {}",
                self.width, self.pitch
            )));
        }
        Ok(())
    }

    /// Aperture width `d * pitch`.
    pub fn aperture(&self) -> f64 {
        self.d as f64 * self.pitch
    }
}

/// Screen synthesis and propagation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurbulenceParams {
    pub altitude: f64,
    pub path_length: f64,
    pub wavelength: f64,
    pub grid_size: usize,
    pub grid_spacing: f64,
    pub model: HvModel,
    /// Replaces the profile-derived Fried parameter when set. Infinity
    /// switches turbulence off.
    pub r0_override: Option<f64>,
}

impl TurbulenceParams {
    /// Standard HV-5/7 constants, `N = 512`, spacing chosen so the default
    /// aperture spans `N/2` pixels.
    pub fn new(altitude: f64, path_length: f64, wavelength: f64) -> Self {
        let geom = SlitGeometry::default();
        Self {
            altitude,
            path_length,
            wavelength,
            grid_size: 512,
            grid_spacing: geom.aperture() / 256.0,
            model: HvModel::default(),
            r0_override: None,
        }
    }

    /// 405 nm over 500 m with the desk-scale ground constant.
    pub fn desk_scale(altitude: f64) -> Self {
        let mut p = Self::new(altitude, 500.0, 405e-9);
        p.model.ground_constant = DESK_SCALE_GROUND_CONSTANT;
        p
    }

    /// Grid spacing that makes `geom` span half the grid.
    pub fn fit_to(mut self, geom: &SlitGeometry) -> Self {
        self.grid_spacing = geom.aperture() / (self.grid_size / 2) as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 256 || !self.grid_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size must be a power of two >= 256, got {}",
                self.grid_size
            )));
        }
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return Err(Error::InvalidParameter(
                "grid spacing must be positive".into(),
            ));
        }
        if !(self.path_length > 0.0 && self.path_length.is_finite()) {
            return Err(Error::InvalidParameter(
                "path length must be positive".into(),
            ));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidParameter(
                "wavelength must be positive".into(),
            ));
        }
        if let Some(r0) = self.r0_override {
            if !(r0 > 0.0) {
                return Err(Error::OutOfRange {
                    what: "r0 override must be positive",
                    value: r0,
                });
            }
        } else {
            self.model.cn2(self.altitude)?;
        }
        Ok(())
    }

    pub fn r0(&self) -> Result<f64> {
        match self.r0_override {
            Some(r0) => Ok(r0),
            None => Ok(fried_parameter(
                self.model.cn2(self.altitude)?,
                self.path_length,
                self.wavelength,
            )),
        }
    }

    pub fn optics(&self) -> Optics {
        Optics {
            path_length: self.path_length,
            wavelength: self.wavelength,
        }
    }
}

/// Propagation used to turn slit tilts into far-field displacements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optics {
    pub path_length: f64,
    pub wavelength: f64,
}

/// `N x N` phase grid in radians, row-major, unwrapped.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScreen {
    n: usize,
    dx: f64,
    r0: f64,
    seed: u64,
    grid: Vec<f64>,
}

impl PhaseScreen {
    pub fn from_grid(n: usize, dx: f64, r0: f64, seed: u64, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != n * n {
            return Err(Error::BadLength {
                len: grid.len(),
                expected: n * n,
            });
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(dx > 0.0) {
            return Err(Error::InvalidParameter(
                "grid spacing must be positive".into(),
            ));
        }
        Ok(Self {
            n,
            dx,
            r0,
            seed,
            grid,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.n + col]
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().sum::<f64>() / self.grid.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.grid.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.grid.len() as f64
    }

    /// Phase wrapped to `[0, 2pi)` and mapped to 8-bit gray, white for 0 and
    /// black for `2pi`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.grid
            .iter()
            .map(|&v| {
                let w = v.rem_euclid(2.0 * PI);
                let level = (w / (2.0 * PI) * 255.0).round().clamp(0.0, 255.0) as u8;
                255 - level
            })
            .collect()
    }
}

/// Signed FFT frequency of bin `k`, cycles per metre.
fn fft_freq(k: usize, n: usize, dx: f64) -> f64 {
    let k = if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    };
    k / (n as f64 * dx)
}

/// Variance of the random tilt contributed by frequencies inside the square
/// `|fx|, |fy| < side/2` that the subharmonics leave out.
fn residual_tilt_variance(coeff: f64, side: f64) -> f64 {
    let steps = 20_000;
    let h = 2.0 * PI / steps as f64;
    let f = |th: f64| {
        let (s, c_) = th.sin_cos();
        let r = (side / 2.0) / c_.abs().max(s.abs());
        4.0 * PI * PI * coeff * c_ * c_ * 3.0 * r.powf(1.0 / 3.0)
    };
    let mut acc = 0.5 * (f(0.0) + f(2.0 * PI));
    for i in 1..steps {
        acc += f(i as f64 * h);
    }
    acc * h
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    c(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// FFT spectral synthesis with PSD `0.023 r0^(-5/3) f^(-11/3)` (f in cycles
/// per metre), plus three levels of jittered 3x3 subharmonics and the tilt
/// of the frequencies below the last level.
pub fn phase_screen(p: &TurbulenceParams, seed: u64) -> Result<PhaseScreen> {
    p.validate()?;
    let r0 = p.r0()?;
    let n = p.grid_size;
    let dx = p.grid_spacing;
    let coeff = PSD_COEFF * r0.powf(-5.0 / 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let df = 1.0 / (n as f64 * dx);
    let mut spec: Vec<C64> = Vec::with_capacity(n * n);
    for row in 0..n {
        let fy = fft_freq(row, n, dx);
        for col in 0..n {
            let fx = fft_freq(col, n, dx);
            let noise = complex_normal(&mut rng);
            let f = fx.hypot(fy);
            let amp = if f > 0.0 {
                (coeff * f.powf(-11.0 / 3.0)).sqrt() * df
            } else {
                0.0
            };
            spec.push(noise * amp);
        }
    }
    inverse_fft2(&mut spec, n);
    let mut grid: Vec<f64> = spec.iter().map(|z| z.re).collect();

    let coord: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * dx).collect();
    let mut low = vec![0.0; n * n];
    let mut ex = vec![c(0.0, 0.0); n];
    let mut ey = vec![c(0.0, 0.0); n];
    for level in 1..=SUBHARMONIC_LEVELS {
        let dfp = df / 3f64.powi(level as i32);
        for a in -1i32..=1 {
            for b in -1i32..=1 {
                if a == 0 && b == 0 {
                    continue;
                }
                let fx = (a as f64 + rng.random::<f64>() - 0.5) * dfp;
                let fy = (b as f64 + rng.random::<f64>() - 0.5) * dfp;
                let amp = (coeff * fx.hypot(fy).powf(-11.0 / 3.0)).sqrt() * dfp;
                let cn = complex_normal(&mut rng) * amp;
                for i in 0..n {
                    ex[i] = C64::from_polar(1.0, 2.0 * PI * fx * coord[i]);
                    ey[i] = C64::from_polar(1.0, 2.0 * PI * fy * coord[i]);
                }
                for row in 0..n {
                    let cy = cn * ey[row];
                    let out = &mut low[row * n..(row + 1) * n];
                    for (o, e) in out.iter_mut().zip(&ex) {
                        *o += (cy * e).re;
                    }
                }
            }
        }
    }
    let side = df / 3f64.powi(SUBHARMONIC_LEVELS as i32);
    let sigma = residual_tilt_variance(coeff, side).sqrt();
    let gx: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
    let gy: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
    for row in 0..n {
        for col in 0..n {
            low[row * n + col] += gx * coord[col] + gy * coord[row];
        }
    }
    let mean = low.iter().sum::<f64>() / (n * n) as f64;
    for (g, l) in grid.iter_mut().zip(&low) {
        *g += l - mean;
    }
    PhaseScreen::from_grid(n, dx, r0, seed, grid)
}

/// Unnormalized 2-D inverse FFT in place.
fn inverse_fft2(data: &mut [C64], n: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    fft.process(data);
    let mut t = vec![c(0.0, 0.0); n * n];
    transpose(data, &mut t, n);
    fft.process(&mut t);
    transpose(&t, data, n);
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}

/// Independent seed for mask `m` of an ensemble seeded with `seed`.
pub fn mask_seed(seed: u64, m: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m);
    rng.next_u64()
}

/// `D(r) = <(phi(x + r) - phi(x))^2>` over all screens, all in-grid pairs
/// and both axes. Separations must be whole multiples of the grid spacing.
pub fn structure_function(screens: &[PhaseScreen], separations: &[f64]) -> Result<Vec<f64>> {
    if screens.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "structure function needs at least 2 screens, got {}",
            screens.len()
        )));
    }
    let (n, dx) = (screens[0].n, screens[0].dx);
    if let Some(s) = screens.iter().find(|s| s.n != n || s.dx != dx) {
        return Err(Error::GeometryMismatch(format!(
            "screen {}x{} at spacing {} vs {}x{} at spacing {}",
            s.n, s.n, s.dx, n, n, dx
        )));
    }
    let lags = separations
        .iter()
        .map(|&r| {
            let k = (r / dx).round();
            if (r / dx - k).abs() > 1e-6 || k < 1.0 || k as usize >= n {
                Err(Error::GeometryMismatch(format!(
                    "separation {r} is not a whole number of grid steps below the screen size"
                )))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(lags
        .par_iter()
        .map(|&k| {
            let total: f64 = screens
                .iter()
                .map(|s| {
                    let g = &s.grid;
                    let mut acc = 0.0;
                    for row in 0..n {
                        let line = &g[row * n..(row + 1) * n];
                        for col in 0..n - k {
                            let dh = line[col + k] - line[col];
                            acc += dh * dh;
                        }
                    }
                    for row in 0..n - k {
                        let a = &g[row * n..(row + 1) * n];
                        let b = &g[(row + k) * n..(row + k + 1) * n];
                        for (x, y) in a.iter().zip(b) {
                            acc += (y - x) * (y - x);
                        }
                    }
                    acc
                })
                .sum();
            total / (screens.len() * 2 * n * (n - k)) as f64
        })
        .collect())
}

/// Least-squares fit of `log y = log a + b log x`; returns `(b, a)`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter(
            "power-law fit needs >= 2 paired points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter(
            "power-law fit needs positive data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    Ok((b, (my - b * mx).exp()))
}

/// How a screen acts on the slit modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlitMode {
    /// Mean phasor per slit on the diagonal.
    DiagonalPhase,
    /// Mean phasor moved to the slit the average tilt steers it onto.
    TiltShift,
}

/// Pixel footprint of a geometry on a given screen.
#[derive(Clone, Copy, Debug)]
struct Footprint {
    first_col: usize,
    pitch_px: usize,
    width_px: usize,
    top_row: usize,
    height_px: usize,
}

impl Footprint {
    fn new(geom: &SlitGeometry, n: usize, dx: f64) -> Result<Self> {
        geom.validate()?;
        let px = |x: f64| (x / dx).round() as usize;
        let (pitch_px, width_px, height_px) = (px(geom.pitch), px(geom.width), px(geom.height));
        if width_px < 2 || height_px < 1 || width_px >= pitch_px {
            return Err(Error::GeometryMismatch(format!(
                "slits resolve to {width_px}x{height_px} px at pitch {pitch_px} px; need width >= 2 px and below the pitch"
            )));
        }
        let span = geom.d * pitch_px;
        if span > n || height_px > n {
            return Err(Error::GeometryMismatch(format!(
                "aperture of {span}x{height_px} px does not fit a {n}x{n} screen"
            )));
        }
        Ok(Self {
            first_col: n / 2 - span / 2 + (pitch_px - width_px) / 2,
            pitch_px,
            width_px,
            top_row: n / 2 - height_px / 2,
            height_px,
        })
    }
}

/// `d x d` operator a single screen applies to slit states. Each column has
/// at most one non-zero entry, the mean phasor of that slit. In tilt-shift
/// mode the entry sits on the row of the slit the far-field displacement
/// `L g lambda / 2pi` lands on. Amplitude steered outside the aperture is
/// lost, and slits landing on the same target share it with weight
/// `1/sqrt(k)` so the operator stays a contraction.
pub fn slit_operator(
    screen: &PhaseScreen,
    geom: &SlitGeometry,
    mode: SlitMode,
    optics: &Optics,
) -> Result<ComplexMatrix> {
    let fp = Footprint::new(geom, screen.n, screen.dx)?;
    let d = geom.d;
    let n = screen.n;
    let mut entries: Vec<Option<(usize, C64)>> = Vec::with_capacity(d);
    for l in 0..d {
        let col0 = fp.first_col + l * fp.pitch_px;
        let mut phasor = c(0.0, 0.0);
        let mut grad = 0.0;
        for row in fp.top_row..fp.top_row + fp.height_px {
            let line = &screen.grid[row * n + col0..row * n + col0 + fp.width_px];
            for &v in line {
                phasor += C64::from_polar(1.0, v);
            }
            grad += (line[fp.width_px - 1] - line[0]) / ((fp.width_px - 1) as f64 * screen.dx);
        }
        phasor /= (fp.width_px * fp.height_px) as f64;
        grad /= fp.height_px as f64;
        let target = match mode {
            SlitMode::DiagonalPhase => Some(l),
            SlitMode::TiltShift => {
                let delta = optics.path_length * grad * optics.wavelength / (2.0 * PI);
                let t = l as f64 + (delta / geom.pitch).round();
                (t >= 0.0 && t < d as f64).then_some(t as usize)
            }
        };
        entries.push(target.map(|t| (t, phasor)));
    }
    let mut hits = vec![0usize; d];
    for (t, _) in entries.iter().flatten() {
        hits[*t] += 1;
    }
    let mut k = ComplexMatrix::zeros(d, d);
    for (l, e) in entries.into_iter().enumerate() {
        if let Some((t, z)) = e {
            k[(t, l)] = z / (hits[t] as f64).sqrt();
        }
    }
    Ok(k)
}

/// Per-mask slit operators, mask `m` drawn from [`mask_seed`]`(seed, m)`.
pub fn slit_operators(
    p: &TurbulenceParams,
    geom: &SlitGeometry,
    mode: SlitMode,
    n_masks: usize,
    seed: u64,
) -> Result<Vec<ComplexMatrix>> {
    if n_masks == 0 {
        return Err(Error::InvalidParameter("need at least one mask".into()));
    }
    p.validate()?;
    Footprint::new(geom, p.grid_size, p.grid_spacing)?;
    let optics = p.optics();
    (0..n_masks)
        .into_par_iter()
        .map(|m| {
            let screen = phase_screen(p, mask_seed(seed, m as u64))?;
            slit_operator(&screen, geom, mode, &optics)
        })
        .collect()
}

/// Ensemble channel with Kraus operators `K_m / sqrt(n)`.
pub fn channel_from_operators(d: usize, ops: &[ComplexMatrix]) -> Result<KrausChannel> {
    let w = 1.0 / (ops.len() as f64).sqrt();
    KrausChannel::new(d, ops.iter().map(|k| k.scale_real(w)).collect())
}

pub fn turbulence_channel(
    p: &TurbulenceParams,
    geom: &SlitGeometry,
    mode: SlitMode,
    n_masks: usize,
    seed: u64,
) -> Result<KrausChannel> {
    let ops = slit_operators(p, geom, mode, n_masks, seed)?;
    channel_from_operators(geom.d, &ops)
}
