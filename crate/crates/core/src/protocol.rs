//! Channel generation, training design and the three-stage beam-state
//! measurement protocol.
//!
//! Each RIS training beam is applied in state 0 (`θ`) or state 1 (`−θ`).
//! Stage 1 measures every `(i, j)` pair with both surfaces in state 0,
//! stage 2 flips RIS 2 and stage 3 flips RIS 1. Sums of stage pairs cancel
//! two of the three reflection links, leaving each link interference free:
//!
//! * `Y00 + Y01 = 2·H1 diag(θ1ᵢ) G1`
//! * `Y00 + Y10 = 2·H2 diag(θ2ⱼ) G2`
//! * `−Y10 − Y01 = 2·H2 diag(θ2ⱼ) T diag(θ1ᵢ) G1`
//!
//! The combined measurements are halved before tensor assembly so the
//! assembled tensors are exact CP models in the noiseless case.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{complex_gaussian_matrix, substream};
use crate::tensor::{cp3_build, hstack, Complex, ComplexMatrix, Tensor3};

/// Antenna, element and training counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SystemDims {
    pub m_bs: usize,
    pub m_ue: usize,
    pub m_s1: usize,
    pub m_s2: usize,
    /// Number of RIS 1 training beams (I).
    pub i_frames: usize,
    /// Number of RIS 2 training beams (J).
    pub j_frames: usize,
    /// Pilot length per frame (K).
    pub k_pilots: usize,
}

impl SystemDims {
    /// Checks the invariants every protocol run relies on.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("M_BS", self.m_bs),
            ("M_UE", self.m_ue),
            ("M_S1", self.m_s1),
            ("M_S2", self.m_s2),
            ("K", self.k_pilots),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Dim(format!("{name} must be ≥ 1")));
            }
        }
        if self.i_frames < 2 {
            return Err(Error::Dim("I must be ≥ 2".into()));
        }
        if self.j_frames < 2 {
            return Err(Error::Dim("J must be ≥ 2".into()));
        }
        if self.k_pilots < self.m_ue {
            return Err(Error::Dim("K must be ≥ M_UE".into()));
        }
        Ok(())
    }
}

/// Ground-truth channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// UE to RIS 1, `M_S1 x M_UE`.
    pub g1: ComplexMatrix,
    /// UE to RIS 2, `M_S2 x M_UE`.
    pub g2: ComplexMatrix,
    /// RIS 1 to BS, `M_BS x M_S1`.
    pub h1: ComplexMatrix,
    /// RIS 2 to BS, `M_BS x M_S2`.
    pub h2: ComplexMatrix,
    /// RIS 1 to RIS 2, `M_S2 x M_S1`.
    pub t: ComplexMatrix,
}

impl ChannelSet {
    pub fn check_shapes(&self, d: &SystemDims) -> Result<()> {
        let expected = [
            ("G1", &self.g1, (d.m_s1, d.m_ue)),
            ("G2", &self.g2, (d.m_s2, d.m_ue)),
            ("H1", &self.h1, (d.m_bs, d.m_s1)),
            ("H2", &self.h2, (d.m_bs, d.m_s2)),
            ("T", &self.t, (d.m_s2, d.m_s1)),
        ];
        for (name, m, shape) in expected {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Pilot matrix and state-0 RIS training matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDesign {
    /// `M_UE x K`, orthonormal rows.
    pub x: ComplexMatrix,
    /// `I x M_S1`; row `i` is the beam `θ1ᵢ`.
    pub theta1: ComplexMatrix,
    /// `J x M_S2`; row `j` is the beam `θ2ⱼ`.
    pub theta2: ComplexMatrix,
}

/// All tensors the estimators consume.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBundle {
    /// Single reflection via RIS 1, `M_BS x M_UE x I`.
    pub y_ris1: Tensor3,
    /// Single reflection via RIS 2, `M_BS x M_UE x J`.
    pub y_ris2: Tensor3,
    /// Coupled tensor sharing `G1`, `M_UE x (J+1)M_BS x I`.
    pub y1c: Tensor3,
    /// Coupled tensor sharing `H2`, `M_BS x (I+1)M_UE x J`.
    pub y2c: Tensor3,
    /// Double-reflection measurements, `J·M_BS x I·M_UE`; block `(j, i)` holds
    /// the `(i, j)` measurement.
    pub y3_gen: ComplexMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Per-entry variance of the receiver noise.
    pub sigma2: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma2: 0.0,
            seed: 0,
        }
    }

    /// `SNR(dB) = −10·log10(σ²)`.
    pub fn from_snr_db(snr_db: f64, seed: u64) -> Self {
        Self {
            sigma2: 10f64.powf(-snr_db / 10.0),
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BeamState {
    /// Beam `θ`.
    Zero,
    /// Beam `−θ`.
    One,
}

impl BeamState {
    fn sign(self) -> f64 {
        match self {
            BeamState::Zero => 1.0,
            BeamState::One => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProtocolOptions {
    /// Average the RIS 1 single-reflection combination over all `j` (and the
    /// RIS 2 one over all `i`) instead of using only the first frame.
    pub average_ris_frames: bool,
}

/// Draws every channel entry i.i.d. from CN(0, 1).
pub fn gen_channels(dims: &SystemDims, seed: u64) -> ChannelSet {
    let mut rng = substream(seed, &[0xC4A7]);
    let d = dims;
    ChannelSet {
        g1: complex_gaussian_matrix(&mut rng, d.m_s1, d.m_ue, 1.0),
        g2: complex_gaussian_matrix(&mut rng, d.m_s2, d.m_ue, 1.0),
        h1: complex_gaussian_matrix(&mut rng, d.m_bs, d.m_s1, 1.0),
        h2: complex_gaussian_matrix(&mut rng, d.m_bs, d.m_s2, 1.0),
        t: complex_gaussian_matrix(&mut rng, d.m_s2, d.m_s1, 1.0),
    }
}

/// Top-left `rows x cols` block of the `n`-point unitary DFT.
fn truncated_dft(rows: usize, cols: usize, n: usize) -> ComplexMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    ComplexMatrix::from_fn(rows, cols, |a, b| {
        // Reduce the exponent modulo n before scaling to keep phases accurate.
        let phase = -2.0 * PI * ((a * b) % n) as f64 / n as f64;
        Complex::from_polar(scale, phase)
    })
}

/// Truncated-DFT training: `X` has orthonormal rows; `Θ` has orthonormal
/// columns when there are at least as many beams as elements and orthonormal
/// rows otherwise.
pub fn gen_training(dims: &SystemDims) -> Result<TrainingDesign> {
    let d = dims;
    if d.k_pilots < d.m_ue {
        return Err(Error::Dim(format!(
            "K = {} must be ≥ M_UE = {}",
            d.k_pilots, d.m_ue
        )));
    }
    Ok(TrainingDesign {
        x: truncated_dft(d.m_ue, d.k_pilots, d.k_pilots),
        theta1: truncated_dft(d.i_frames, d.m_s1, d.i_frames.max(d.m_s1)),
        theta2: truncated_dft(d.j_frames, d.m_s2, d.j_frames.max(d.m_s2)),
    })
}

/// `diag(row i of theta) · m`.
fn diag_times(theta: &ComplexMatrix, i: usize, m: &ComplexMatrix) -> ComplexMatrix {
    let mut out = m.clone();
    for (r, mut out_row) in out.row_iter_mut().enumerate() {
        out_row *= theta[(i, r)];
    }
    out
}

/// `m · diag(row j of theta)`.
fn times_diag(m: &ComplexMatrix, theta: &ComplexMatrix, j: usize) -> ComplexMatrix {
    let mut out = m.clone();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        col *= theta[(j, c)];
    }
    out
}

/// The noiseless signal parts of one measurement, split per link.
struct LinkTerms {
    /// `H2 diag(θ2ⱼ) T diag(θ1ᵢ) G1`
    double: ComplexMatrix,
    /// `H1 diag(θ1ᵢ) G1`
    via_ris1: ComplexMatrix,
    /// `H2 diag(θ2ⱼ) G2`
    via_ris2: ComplexMatrix,
}

/// Per-beam products shared by all measurements that use the beam.
struct Precomputed {
    /// `T diag(θ1ᵢ) G1` per i.
    t_d1_g1: Vec<ComplexMatrix>,
    /// `H1 diag(θ1ᵢ) G1` per i.
    h1_d1_g1: Vec<ComplexMatrix>,
    /// `H2 diag(θ2ⱼ)` per j.
    h2_d2: Vec<ComplexMatrix>,
    /// `H2 diag(θ2ⱼ) G2` per j.
    h2_d2_g2: Vec<ComplexMatrix>,
}

impl Precomputed {
    fn new(ch: &ChannelSet, tr: &TrainingDesign) -> Self {
        let mut t_d1_g1 = Vec::new();
        let mut h1_d1_g1 = Vec::new();
        for i in 0..tr.theta1.nrows() {
            let d1_g1 = diag_times(&tr.theta1, i, &ch.g1);
            t_d1_g1.push(&ch.t * &d1_g1);
            h1_d1_g1.push(&ch.h1 * &d1_g1);
        }
        let mut h2_d2 = Vec::new();
        let mut h2_d2_g2 = Vec::new();
        for j in 0..tr.theta2.nrows() {
            let h = times_diag(&ch.h2, &tr.theta2, j);
            h2_d2_g2.push(&h * &ch.g2);
            h2_d2.push(h);
        }
        Self {
            t_d1_g1,
            h1_d1_g1,
            h2_d2,
            h2_d2_g2,
        }
    }

    fn terms(&self, i: usize, j: usize) -> LinkTerms {
        LinkTerms {
            double: &self.h2_d2[j] * &self.t_d1_g1[i],
            via_ris1: self.h1_d1_g1[i].clone(),
            via_ris2: self.h2_d2_g2[j].clone(),
        }
    }
}

/// Right-filtered measurement `Ȳ·Xᴴ` for beam pair `(i, j)` (0-based) in
/// the given states, with fresh CN(0, σ²) receiver noise from `rng`.
fn measure<R: Rng + ?Sized>(
    terms: &LinkTerms,
    x: &ComplexMatrix,
    s1: BeamState,
    s2: BeamState,
    sigma2: f64,
    rng: &mut R,
) -> ComplexMatrix {
    let (a, b) = (s1.sign(), s2.sign());
    let signal = &terms.double * Complex::new(a * b, 0.0)
        + &terms.via_ris1 * Complex::new(a, 0.0)
        + &terms.via_ris2 * Complex::new(b, 0.0);
    if sigma2 == 0.0 {
        return signal;
    }
    // Received block is signal·X + N̄; right filtering by Xᴴ leaves the signal
    // (X Xᴴ = I) plus the filtered noise.
    let noise = complex_gaussian_matrix(rng, signal.nrows(), x.ncols(), sigma2);
    signal + noise * x.adjoint()
}

/// One right-filtered measurement matrix for beams `(i, j)` (0-based).
#[allow(clippy::too_many_arguments)]
pub fn raw_measurement<R: Rng + ?Sized>(
    ch: &ChannelSet,
    tr: &TrainingDesign,
    i: usize,
    j: usize,
    s1: BeamState,
    s2: BeamState,
    sigma2: f64,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let (ni, nj) = (tr.theta1.nrows(), tr.theta2.nrows());
    if i >= ni || j >= nj {
        return Err(Error::IndexOutOfRange(format!(
            "beam pair ({i}, {j}) outside {ni}x{nj}"
        )));
    }
    let d1_g1 = diag_times(&tr.theta1, i, &ch.g1);
    let h2d = times_diag(&ch.h2, &tr.theta2, j);
    let terms = LinkTerms {
        double: &h2d * (&ch.t * &d1_g1),
        via_ris1: &ch.h1 * &d1_g1,
        via_ris2: &h2d * &ch.g2,
    };
    Ok(measure(&terms, &tr.x, s1, s2, sigma2, rng))
}

const STAGE_00: u64 = 0;
const STAGE_01: u64 = 1;
const STAGE_10: u64 = 2;

/// Runs all three stages and assembles the measurement tensors.
pub fn run_protocol(
    ch: &ChannelSet,
    tr: &TrainingDesign,
    noise: &NoiseModel,
) -> Result<MeasurementBundle> {
    run_protocol_with(ch, tr, noise, ProtocolOptions::default())
}

#[allow(clippy::needless_range_loop)]
pub fn run_protocol_with(
    ch: &ChannelSet,
    tr: &TrainingDesign,
    noise: &NoiseModel,
    opts: ProtocolOptions,
) -> Result<MeasurementBundle> {
    let dims = dims_of(ch, tr);
    ch.check_shapes(&dims)?;
    if noise.sigma2 < 0.0 || !noise.sigma2.is_finite() {
        return Err(Error::Dim(format!("noise variance {} is invalid", noise.sigma2)));
    }
    let (ni, nj) = (dims.i_frames, dims.j_frames);
    let (m_bs, m_ue) = (dims.m_bs, dims.m_ue);
    let pre = Precomputed::new(ch, tr);
    let half = Complex::new(0.5, 0.0);

    let mut ris1_sum = vec![ComplexMatrix::zeros(m_bs, m_ue); ni];
    let mut ris2_sum = vec![ComplexMatrix::zeros(m_bs, m_ue); nj];
    let mut y3_gen = ComplexMatrix::zeros(nj * m_bs, ni * m_ue);

    for i in 0..ni {
        for j in 0..nj {
            let terms = pre.terms(i, j);
            // Each (i, j, stage) has its own noise stream.
            let stage = |tag: u64, s1, s2| {
                let mut rng = substream(noise.seed, &[i as u64, j as u64, tag]);
                measure(&terms, &tr.x, s1, s2, noise.sigma2, &mut rng)
            };
            let y00 = stage(STAGE_00, BeamState::Zero, BeamState::Zero);
            let y01 = stage(STAGE_01, BeamState::Zero, BeamState::One);
            let y10 = stage(STAGE_10, BeamState::One, BeamState::Zero);

            let double = (-&y10 - &y01) * half;
            y3_gen.view_mut((j * m_bs, i * m_ue), (m_bs, m_ue)).copy_from(&double);

            if opts.average_ris_frames || j == 0 {
                ris1_sum[i] += (&y00 + &y01) * half;
            }
            if opts.average_ris_frames || i == 0 {
                ris2_sum[j] += (&y00 + &y10) * half;
            }
        }
    }
    if opts.average_ris_frames {
        let (ai, aj) = (Complex::new(1.0 / nj as f64, 0.0), Complex::new(1.0 / ni as f64, 0.0));
        ris1_sum.iter_mut().for_each(|m| *m *= ai);
        ris2_sum.iter_mut().for_each(|m| *m *= aj);
    }

    let y_ris1 = Tensor3::from_frontal_slices(&ris1_sum)?;
    let y_ris2 = Tensor3::from_frontal_slices(&ris2_sum)?;
    let y1c = assemble_coupled_y1(&y_ris1, &y3_gen, &dims)?;
    let y2c = assemble_coupled_y2(&y_ris2, &y3_gen, &dims)?;
    Ok(MeasurementBundle {
        y_ris1,
        y_ris2,
        y1c,
        y2c,
        y3_gen,
    })
}

fn dims_of(ch: &ChannelSet, tr: &TrainingDesign) -> SystemDims {
    SystemDims {
        m_bs: ch.h1.nrows(),
        m_ue: ch.g1.ncols(),
        m_s1: ch.g1.nrows(),
        m_s2: ch.g2.nrows(),
        i_frames: tr.theta1.nrows(),
        j_frames: tr.theta2.nrows(),
        k_pilots: tr.x.ncols(),
    }
}

fn check_double_blocks(y3_gen: &ComplexMatrix, dims: &SystemDims) -> Result<()> {
    let expected = (dims.j_frames * dims.m_bs, dims.i_frames * dims.m_ue);
    if y3_gen.shape() != expected || dims.i_frames == 0 || dims.j_frames == 0 {
        return Err(Error::ShapeMismatch(format!(
            "double-reflection blocks are {:?}, expected {expected:?}",
            y3_gen.shape()
        )));
    }
    Ok(())
}

/// Coupled tensor sharing `G1`.
///
/// Frontal slice `i` is `[Y_RIS1(i)ᵀ, Y3(i,1)ᵀ, …, Y3(i,J)ᵀ]`, which in the
/// noiseless case equals `G1ᵀ diag(θ1ᵢ) Σ1ᵀ` with `Σ1 = [H1; (Θ2 ⋄ H2) T]`.
/// This realizes the column permutation of the stacked mode-2 unfoldings
/// slice by slice.
pub fn assemble_coupled_y1(
    y_ris1: &Tensor3,
    y3_gen: &ComplexMatrix,
    dims: &SystemDims,
) -> Result<Tensor3> {
    let (m_bs, m_ue, ni) = (dims.m_bs, dims.m_ue, dims.i_frames);
    if y_ris1.dims() != [m_bs, m_ue, ni] {
        return Err(Error::ShapeMismatch(format!(
            "RIS 1 tensor is {:?}, expected {:?}",
            y_ris1.dims(),
            [m_bs, m_ue, ni]
        )));
    }
    check_double_blocks(y3_gen, dims)?;
    let slices = (0..ni)
        .map(|i| {
            let single = y_ris1.frontal_slice(i).transpose();
            // Column block i of y3_gen, transposed, is [Y3(i,1)ᵀ … Y3(i,J)ᵀ].
            let double = y3_gen.columns(i * m_ue, m_ue).transpose();
            hstack(&[&single, &double])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_frontal_slices(&slices)
}

/// Coupled tensor sharing `H2`.
///
/// Frontal slice `j` is `[Y_RIS2(j), Y3(1,j), …, Y3(I,j)]`, noiselessly
/// `H2 diag(θ2ⱼ) Σ2ᵀ` with `Σ2 = [G2ᵀ; (Θ1 ⋄ G1ᵀ) Tᵀ]`.
pub fn assemble_coupled_y2(
    y_ris2: &Tensor3,
    y3_gen: &ComplexMatrix,
    dims: &SystemDims,
) -> Result<Tensor3> {
    let (m_bs, m_ue, nj) = (dims.m_bs, dims.m_ue, dims.j_frames);
    if y_ris2.dims() != [m_bs, m_ue, nj] {
        return Err(Error::ShapeMismatch(format!(
            "RIS 2 tensor is {:?}, expected {:?}",
            y_ris2.dims(),
            [m_bs, m_ue, nj]
        )));
    }
    check_double_blocks(y3_gen, dims)?;
    let slices = (0..nj)
        .map(|j| {
            let single = y_ris2.frontal_slice(j);
            let double = y3_gen.rows(j * m_bs, m_bs).into_owned();
            hstack(&[&single, &double])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_frontal_slices(&slices)
}

/// Noiseless single-reflection model `cp3_build(H, Gᵀ, Θ)`.
pub fn single_reflection_model(
    h: &ComplexMatrix,
    g: &ComplexMatrix,
    theta: &ComplexMatrix,
) -> Result<Tensor3> {
    cp3_build(h, &g.transpose(), theta)
}
