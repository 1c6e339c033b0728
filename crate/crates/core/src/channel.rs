//! SIM geometry, Rayleigh-Sommerfeld inter-layer matrices, correlated user
//! channels and the wave-domain cascade.
//!
//! Layers are indexed from 0 (closest to the antennas) in code. Layer `m`
//! sits at height `(m + 1)·d_layer` above the antenna plane.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::scalar::sinc;
use crate::{CMatrix, CVector, Complex, Error, RMatrix, Result};

pub type Position = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimGeometry {
    pub wavelength: f64,
    /// Meta-atom pitch, equal along both in-plane axes.
    pub pitch: f64,
    pub atoms_per_side: usize,
    pub layers: usize,
    pub thickness: f64,
    pub layer_spacing: f64,
    pub antennas: usize,
    pub antenna_pitch: f64,
    pub antenna_positions: Vec<Position>,
    /// In-plane coordinates of the atoms, row-major over the square grid.
    pub atom_grid: Vec<[f64; 2]>,
}

impl SimGeometry {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let side = config
            .atoms_per_side()
            .ok_or_else(|| Error::config("atoms", format!("{} is not a perfect square", config.atoms)))?;
        if config.layers == 0 || config.antennas == 0 {
            return Err(Error::config("layers", "layer and antenna counts must be positive"));
        }
        let wavelength = config.wavelength();
        if !(wavelength > 0.0) || !(config.thickness_wavelengths > 0.0) {
            return Err(Error::config("carrier_hz", "wavelength and thickness must be positive"));
        }
        let pitch = wavelength / 2.0;
        let antenna_pitch = wavelength / 2.0;
        let thickness = config.thickness_wavelengths * wavelength;
        let layer_spacing = thickness / config.layers as f64;

        let centered = |i: usize, count: usize, step: f64| (i as f64 - (count as f64 - 1.0) / 2.0) * step;
        let atom_grid = (0..side * side)
            .map(|n| [centered(n % side, side, pitch), centered(n / side, side, pitch)])
            .collect();
        let antenna_positions = (0..config.antennas)
            .map(|l| [centered(l, config.antennas, antenna_pitch), 0.0, 0.0])
            .collect();
        Ok(Self {
            wavelength,
            pitch,
            atoms_per_side: side,
            layers: config.layers,
            thickness,
            layer_spacing,
            antennas: config.antennas,
            antenna_pitch,
            antenna_positions,
            atom_grid,
        })
    }

    pub fn atoms(&self) -> usize {
        self.atom_grid.len()
    }

    pub fn atom_position(&self, layer: usize, n: usize) -> Position {
        let [x, y] = self.atom_grid[n];
        [x, y, (layer + 1) as f64 * self.layer_spacing]
    }

    pub fn layer_positions(&self, layer: usize) -> Vec<Position> {
        (0..self.atoms()).map(|n| self.atom_position(layer, n)).collect()
    }
}

/// Rayleigh-Sommerfeld transmission coefficient between two elements on
/// parallel planes.
pub fn diffraction_coefficient(src: Position, dst: Position, geometry: &SimGeometry) -> Result<Complex> {
    let dx = dst[0] - src[0];
    let dy = dst[1] - src[1];
    let dz = dst[2] - src[2];
    let d = (dx * dx + dy * dy + dz * dz).sqrt();
    if dz == 0.0 || d == 0.0 {
        return Err(Error::Domain(format!(
            "elements at {src:?} and {dst:?} are not on distinct planes"
        )));
    }
    let lambda = geometry.wavelength;
    let cos_chi = dz.abs() / d;
    let area = geometry.pitch * geometry.pitch;
    let amplitude = area * cos_chi / d;
    let k = std::f64::consts::TAU * d / lambda;
    let radial = Complex::new(1.0 / (std::f64::consts::TAU * d), -1.0 / lambda);
    Ok(radial * amplitude * Complex::from_polar(1.0, k))
}

/// Antenna-to-first-layer matrix and the inter-layer matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagation {
    /// `N × L`.
    pub w1: CMatrix,
    /// `inter[i]` maps layer `i` to layer `i + 1`, each `N × N`.
    pub inter: Vec<CMatrix>,
}

pub fn build_interlayer_matrices(geometry: &SimGeometry) -> Result<Propagation> {
    let n = geometry.atoms();
    let first = geometry.layer_positions(0);
    let mut w1 = CMatrix::zeros(n, geometry.antennas);
    for (r, dst) in first.iter().enumerate() {
        for (c, src) in geometry.antenna_positions.iter().enumerate() {
            w1[(r, c)] = diffraction_coefficient(*src, *dst, geometry)?;
        }
    }
    let mut inter = Vec::with_capacity(geometry.layers.saturating_sub(1));
    for m in 1..geometry.layers {
        let from = geometry.layer_positions(m - 1);
        let to = geometry.layer_positions(m);
        let mut w = CMatrix::zeros(n, n);
        for (r, dst) in to.iter().enumerate() {
            for (c, src) in from.iter().enumerate() {
                w[(r, c)] = diffraction_coefficient(*src, *dst, geometry)?;
            }
        }
        inter.push(w);
    }
    Ok(Propagation { w1, inter })
}

/// Spatial correlation at the last layer and its PSD square root.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationModel {
    pub r: RMatrix,
    /// Symmetric `S` with `S Sᵀ` equal to `r` after clamping negative eigenvalues.
    pub root: RMatrix,
}

impl CorrelationModel {
    pub fn from_matrix(r: RMatrix) -> Self {
        let eig = SymmetricEigen::new(r.clone());
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        Self { r, root }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            r: RMatrix::identity(n, n),
            root: RMatrix::identity(n, n),
        }
    }

    /// `r` with negative eigenvalues set to zero.
    pub fn clamped(&self) -> RMatrix {
        &self.root * self.root.transpose()
    }
}

pub fn build_sinc_correlation(geometry: &SimGeometry) -> CorrelationModel {
    let n = geometry.atoms();
    let r = RMatrix::from_fn(n, n, |i, j| {
        let [xi, yi] = geometry.atom_grid[i];
        let [xj, yj] = geometry.atom_grid[j];
        let d = (xi - xj).hypot(yi - yj);
        sinc(2.0 * d / geometry.wavelength)
    });
    CorrelationModel::from_matrix(r)
}

/// Large-scale fading `C₀ (d/d₀)^(−exponent)` with `C₀ = (λ/4πd₀)²`, `d₀ = 1 m`.
pub fn path_loss<T: Float>(distance: T, wavelength: T, exponent: T) -> Result<T> {
    let d0 = T::one();
    if !(distance > d0) {
        return Err(Error::Domain(format!(
            "path loss needs distance above 1 m, got {}",
            distance.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let four_pi = T::from(4.0 * std::f64::consts::PI).expect("float constant");
    let c0 = (wavelength / (four_pi * d0)).powi(2);
    Ok(c0 * (distance / d0).powf(-exponent))
}

/// Base-station reference point; users are placed around `(ue_distance, 0)`.
pub fn bs_position(config: &SystemConfig) -> Position {
    [0.0, 0.0, config.bs_height]
}

/// Users drawn uniformly in a disc of radius `ue_jitter` around the
/// reference point.
pub fn sample_user_positions<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Vec<Position> {
    (0..config.users)
        .map(|_| {
            let r = config.ue_jitter * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            [config.ue_distance + r * theta.cos(), r * theta.sin(), config.ue_height]
        })
        .collect()
}

/// One Monte-Carlo draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub w1: CMatrix,
    pub inter: Vec<CMatrix>,
    /// Last-layer-to-user channels `h_SIM,k`, each of length `N`.
    pub users: Vec<CVector>,
    pub path_loss: Vec<f64>,
    pub noise: Vec<f64>,
}

impl ChannelRealization {
    pub fn atoms(&self) -> usize {
        self.w1.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.w1.ncols()
    }

    pub fn layers(&self) -> usize {
        self.inter.len() + 1
    }

    pub fn users(&self) -> usize {
        self.users.len()
    }
}

/// Circularly-symmetric standard complex normal vector.
pub fn complex_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(re * s, im * s)
    })
}

pub fn sample_user_channels<R: Rng + ?Sized>(
    propagation: &Propagation,
    correlation: &CorrelationModel,
    positions: &[Position],
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let bs = bs_position(config);
    let root = correlation.root.map(|v| Complex::new(v, 0.0));
    let n = root.nrows();
    let mut users = Vec::with_capacity(positions.len());
    let mut betas = Vec::with_capacity(positions.len());
    for p in positions {
        let d = ((p[0] - bs[0]).powi(2) + (p[1] - bs[1]).powi(2) + (p[2] - bs[2]).powi(2)).sqrt();
        let beta = path_loss(d, config.wavelength(), config.path_loss_exponent)?;
        let z = complex_normal(n, rng);
        users.push(&root * z * Complex::new(beta.sqrt(), 0.0));
        betas.push(beta);
    }
    Ok(ChannelRealization {
        w1: propagation.w1.clone(),
        inter: propagation.inter.clone(),
        users,
        path_loss: betas,
        noise: vec![config.noise_power(); positions.len()],
    })
}

/// Deterministic part of a scenario, shared by all trials.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: SystemConfig,
    pub geometry: SimGeometry,
    pub propagation: Propagation,
    pub correlation: CorrelationModel,
}

impl Scenario {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        config.validate()?;
        let geometry = SimGeometry::new(config)?;
        let propagation = build_interlayer_matrices(&geometry)?;
        let correlation = build_sinc_correlation(&geometry);
        Ok(Self {
            config: config.clone(),
            geometry,
            propagation,
            correlation,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChannelRealization> {
        let positions = sample_user_positions(&self.config, rng);
        sample_user_channels(&self.propagation, &self.correlation, &positions, &self.config, rng)
    }
}

fn phase_diag(phases: &[f64]) -> Vec<Complex> {
    phases.iter().map(|&p| Complex::from_polar(1.0, p)).collect()
}

fn scale_rows(m: &mut CMatrix, d: &[Complex]) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= d[i];
    }
}

/// `G = Φ_M W_M ⋯ Φ₂ W₂ Φ₁` from raw phases.
pub fn compose_cascade(phases: &[Vec<f64>], inter: &[CMatrix]) -> Result<CMatrix> {
    if phases.len() != inter.len() + 1 {
        return Err(Error::Shape(format!(
            "{} phase layers for {} inter-layer matrices",
            phases.len(),
            inter.len()
        )));
    }
    let n = phases[0].len();
    if phases.iter().any(|p| p.len() != n) || inter.iter().any(|w| w.shape() != (n, n)) {
        return Err(Error::Shape("every layer must have the same atom count".into()));
    }
    let mut g = CMatrix::from_diagonal(&DVector::from_vec(phase_diag(&phases[0])));
    for (w, p) in inter.iter().zip(&phases[1..]) {
        g = w * g;
        scale_rows(&mut g, &phase_diag(p));
    }
    Ok(g)
}

/// SIM phases with the cached cascade matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    phases: Vec<Vec<f64>>,
    cascade: CMatrix,
}

impl PhaseState {
    pub fn new(phases: Vec<Vec<f64>>, channel: &ChannelRealization) -> Result<Self> {
        if phases.first().map(Vec::len) != Some(channel.atoms()) {
            return Err(Error::Shape("phase layer length differs from atom count".into()));
        }
        let phases: Vec<Vec<f64>> = phases
            .into_iter()
            .map(|l| l.into_iter().map(crate::scalar::wrap_phase).collect())
            .collect();
        let cascade = compose_cascade(&phases, &channel.inter)?;
        Ok(Self { phases, cascade })
    }

    pub fn zeros(channel: &ChannelRealization) -> Self {
        Self::new(vec![vec![0.0; channel.atoms()]; channel.layers()], channel).expect("shapes from channel")
    }

    pub fn random<R: Rng + ?Sized>(channel: &ChannelRealization, rng: &mut R) -> Self {
        let phases = (0..channel.layers())
            .map(|_| {
                (0..channel.atoms())
                    .map(|_| std::f64::consts::TAU * rng.random::<f64>())
                    .collect()
            })
            .collect();
        Self::new(phases, channel).expect("shapes from channel")
    }

    pub fn phases(&self) -> &[Vec<f64>] {
        &self.phases
    }

    pub fn layer(&self, m: usize) -> &[f64] {
        &self.phases[m]
    }

    pub fn layers(&self) -> usize {
        self.phases.len()
    }

    pub fn cascade(&self) -> &CMatrix {
        &self.cascade
    }

    /// Transmission coefficients `e^{jφ}` of layer `m`.
    pub fn coefficients(&self, m: usize) -> Vec<Complex> {
        phase_diag(&self.phases[m])
    }

    pub fn with_layer(&self, m: usize, layer: Vec<f64>, channel: &ChannelRealization) -> Result<Self> {
        let mut phases = self.phases.clone();
        phases[m] = layer;
        Self::new(phases, channel)
    }
}

/// Effective channels `h_k` with `h_kᴴ = h_SIM,kᴴ G W₁`, one `L`-vector per user.
pub fn effective_channels(channel: &ChannelRealization, phases: &PhaseState) -> Vec<CVector> {
    let gw = phases.cascade() * &channel.w1;
    let gw_h = gw.adjoint();
    channel.users.iter().map(|h| &gw_h * h).collect()
}
