//! Channel estimators built on the coupled measurement tensors.
//!
//! * [`ckraft`]: closed form. Left-filters the mode-3 unfoldings of the two
//!   coupled tensors with `Θᴴ` and splits the result by Khatri-Rao
//!   factorization.
//! * [`cals`]: coupled alternating least squares.
//! * [`baseline_uncoupled`]: per-link ALS on the single-reflection tensors
//!   only, without the double-reflection data.
//!
//! All three finish with the bilinear least-squares fit of `T` in
//! [`estimate_t`]. Factor estimates carry per-column scaling ambiguities that
//! cancel in the cascaded channels.

use std::fmt;

use crate::error::{Error, Result};
use crate::evaluation::{check_identifiability, Method};
use crate::factorization::{krf, ls_solve_right, pinv_default};
use crate::protocol::{MeasurementBundle, SystemDims, TrainingDesign};
use crate::rng::{complex_gaussian_matrix, substream};
use crate::tensor::{is_finite, khatri_rao, vstack, Complex, ComplexMatrix};

/// Estimated channels, shaped like [`crate::protocol::ChannelSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSet {
    pub g1: ComplexMatrix,
    pub g2: ComplexMatrix,
    pub h1: ComplexMatrix,
    pub h2: ComplexMatrix,
    pub t: ComplexMatrix,
}

impl EstimateSet {
    pub fn is_finite(&self) -> bool {
        [&self.g1, &self.g2, &self.h1, &self.h2, &self.t]
            .into_iter()
            .all(is_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    /// A training-size condition of the estimator does not hold.
    NotIdentifiable(String),
    /// A least-squares factor lost rank; the solution is minimum norm.
    RankDeficient {
        factor: &'static str,
        rank: usize,
        expected: usize,
    },
    /// KRF met identically zero columns.
    ZeroKrfColumns {
        factor: &'static str,
        columns: Vec<usize>,
    },
    /// The ALS objective grew at this iteration.
    Diverged { iteration: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NotIdentifiable(c) => write!(f, "identifiability condition violated: {c}"),
            Warning::RankDeficient {
                factor,
                rank,
                expected,
            } => write!(f, "{factor} has rank {rank}, expected {expected}"),
            Warning::ZeroKrfColumns { factor, columns } => {
                write!(f, "zero KRF columns for {factor}: {columns:?}")
            }
            Warning::Diverged { iteration } => write!(f, "objective increased at iteration {iteration}"),
        }
    }
}

fn push_unique(warnings: &mut Vec<Warning>, w: Warning) {
    if !warnings.contains(&w) {
        warnings.push(w);
    }
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub channels: EstimateSet,
    pub warnings: Vec<Warning>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlsInit {
    Ckraft,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlsConfig {
    pub t_max: usize,
    pub init: AlsInit,
    /// Stop once both residuals change by less than this fraction.
    pub rel_change_tol: f64,
    /// Seed for random initialization.
    pub seed: u64,
    /// Try an extrapolated iterate after each sweep and keep it when it fits
    /// better. Shortens the slow stretches typical of ALS without giving up
    /// monotonicity; `false` gives the plain update sequence.
    pub extrapolate: bool,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            t_max: 10,
            init: AlsInit::Random,
            rel_change_tol: 1e-12,
            seed: 0,
            extrapolate: true,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Dim("t_max must be ≥ 1".into()));
        }
        if self.rel_change_tol.is_nan() || self.rel_change_tol < 0.0 {
            return Err(Error::Dim("rel_change_tol must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Per-iteration fit history of an ALS run.
///
/// For [`cals`], `residuals_1` and `residuals_2` are the Frobenius fit errors
/// of the two coupled tensors; for [`baseline_uncoupled`] they are those of
/// the two single-reflection tensors. `objective` is the joint fit error
/// over every measurement used exactly once, which each update can only
/// decrease.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlsTrace {
    pub residuals_1: Vec<f64>,
    pub residuals_2: Vec<f64>,
    pub objective: Vec<f64>,
    pub iterations_run: usize,
    /// Iterations at which the objective increased by more than 1e-6 relative.
    pub diverged: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AlsEstimate {
    pub channels: EstimateSet,
    pub trace: AlsTrace,
    pub warnings: Vec<Warning>,
}

const DIVERGENCE_SLACK: f64 = 1e-6;
const STEP_START: f64 = 1.5;
const STEP_GROWTH: f64 = 1.5;
const STEP_MAX: f64 = 16.0;
/// Residuals below this fraction of the data norm count as converged.
const RESIDUAL_FLOOR: f64 = 1e-13;

/// `Σ1 = [H1; (Θ2 ⋄ H2) T]`, `(J+1)·M_BS x M_S1`.
pub fn build_sigma1(
    h1: &ComplexMatrix,
    h2: &ComplexMatrix,
    t: &ComplexMatrix,
    theta2: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_product(h2.ncols(), t.nrows(), "(Θ2 ⋄ H2)·T")?;
    if h1.nrows() != h2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "H1 has {} rows, H2 has {}",
            h1.nrows(),
            h2.nrows()
        )));
    }
    let lower = khatri_rao(theta2, h2)? * t;
    vstack(&[h1, &lower])
}

/// `Σ2 = [G2ᵀ; (Θ1 ⋄ G1ᵀ) Tᵀ]`, `(I+1)·M_UE x M_S2`.
pub fn build_sigma2(
    g2: &ComplexMatrix,
    g1: &ComplexMatrix,
    t: &ComplexMatrix,
    theta1: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_product(g1.nrows(), t.ncols(), "(Θ1 ⋄ G1ᵀ)·Tᵀ")?;
    if g1.ncols() != g2.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "G1 has {} columns, G2 has {}",
            g1.ncols(),
            g2.ncols()
        )));
    }
    let lower = khatri_rao(theta1, &g1.transpose())? * t.transpose();
    vstack(&[&g2.transpose(), &lower])
}

fn check_product(inner_left: usize, inner_right: usize, what: &str) -> Result<()> {
    if inner_left != inner_right {
        return Err(Error::ShapeMismatch(format!(
            "{what}: inner dimensions {inner_left} and {inner_right} differ"
        )));
    }
    Ok(())
}

fn check_bundle(b: &MeasurementBundle, tr: &TrainingDesign, d: &SystemDims) -> Result<()> {
    let (m_bs, m_ue, ni, nj) = (d.m_bs, d.m_ue, d.i_frames, d.j_frames);
    let tensors = [
        ("Y_RIS1", b.y_ris1.dims(), [m_bs, m_ue, ni]),
        ("Y_RIS2", b.y_ris2.dims(), [m_bs, m_ue, nj]),
        ("Y1", b.y1c.dims(), [m_ue, (nj + 1) * m_bs, ni]),
        ("Y2", b.y2c.dims(), [m_bs, (ni + 1) * m_ue, nj]),
    ];
    for (name, got, want) in tensors {
        if got != want {
            return Err(Error::ShapeMismatch(format!("{name} is {got:?}, expected {want:?}")));
        }
    }
    let mats = [
        ("Y3", b.y3_gen.shape(), (nj * m_bs, ni * m_ue)),
        ("Θ1", tr.theta1.shape(), (ni, d.m_s1)),
        ("Θ2", tr.theta2.shape(), (nj, d.m_s2)),
    ];
    for (name, got, want) in mats {
        if got != want {
            return Err(Error::ShapeMismatch(format!("{name} is {got:?}, expected {want:?}")));
        }
    }
    Ok(())
}

fn identifiability_warnings(dims: &SystemDims, method: Method) -> Vec<Warning> {
    check_identifiability(dims, method)
        .failed()
        .map(|c| Warning::NotIdentifiable(c.to_string()))
        .collect()
}

/// Bilinear least-squares fit of `T` to the double-reflection measurements,
/// `T̂ = (Θ2 ⋄ Ĥ2)⁺ · Y3 · ((Θ1 ⋄ Ĝ1ᵀ)ᵀ)⁺`.
pub fn estimate_t(
    y3_gen: &ComplexMatrix,
    g1_hat: &ComplexMatrix,
    h2_hat: &ComplexMatrix,
    tr: &TrainingDesign,
) -> Result<(ComplexMatrix, Vec<Warning>)> {
    let left = khatri_rao(&tr.theta2, h2_hat)?;
    let right = khatri_rao(&tr.theta1, &g1_hat.transpose())?;
    if y3_gen.shape() != (left.nrows(), right.nrows()) {
        return Err(Error::ShapeMismatch(format!(
            "double-reflection data is {:?}, expected {:?}",
            y3_gen.shape(),
            (left.nrows(), right.nrows())
        )));
    }
    let mut warnings = Vec::new();
    let left_pinv = pinv_default(&left)?;
    if left_pinv.rank < left.ncols() {
        warnings.push(Warning::RankDeficient {
            factor: "Θ2 ⋄ H2",
            rank: left_pinv.rank,
            expected: left.ncols(),
        });
    }
    let partial = left_pinv.matrix * y3_gen;
    let sol = ls_solve_right(&partial, &right.transpose())?;
    if sol.rank < right.ncols() {
        warnings.push(Warning::RankDeficient {
            factor: "Θ1 ⋄ G1ᵀ",
            rank: sol.rank,
            expected: right.ncols(),
        });
    }
    Ok((sol.x, warnings))
}

/// Closed-form estimator.
///
/// Needs `I ≥ M_S1` and `J ≥ M_S2` so that `Θᴴ Θ = I`; smaller training is
/// accepted with a warning and degrades the estimate.
pub fn ckraft(
    bundle: &MeasurementBundle,
    tr: &TrainingDesign,
    dims: &SystemDims,
) -> Result<Estimate> {
    check_bundle(bundle, tr, dims)?;
    let mut warnings = identifiability_warnings(dims, Method::Ckraft);
    let (m_bs, m_ue) = (dims.m_bs, dims.m_ue);

    // Θ1ᴴ [Y1]_(3) ≈ (Σ1 ⋄ G1ᵀ)ᵀ
    let filtered1 = (tr.theta1.adjoint() * bundle.y1c.unfold(3)?).transpose();
    let k1 = krf(&filtered1, (dims.j_frames + 1) * m_bs, m_ue)?;
    // Θ2ᴴ [Y2]_(3) ≈ (Σ2 ⋄ H2)ᵀ
    let filtered2 = (tr.theta2.adjoint() * bundle.y2c.unfold(3)?).transpose();
    let k2 = krf(&filtered2, (dims.i_frames + 1) * m_ue, m_bs)?;

    for (factor, k) in [("Σ1 ⋄ G1ᵀ", &k1), ("Σ2 ⋄ H2", &k2)] {
        if !k.zero_columns.is_empty() {
            warnings.push(Warning::ZeroKrfColumns {
                factor,
                columns: k.zero_columns.clone(),
            });
        }
    }

    let g1 = k1.b.transpose();
    let h1 = k1.a.rows(0, m_bs).into_owned();
    let h2 = k2.b;
    let g2 = k2.a.rows(0, m_ue).transpose();
    let (t, tw) = estimate_t(&bundle.y3_gen, &g1, &h2, tr)?;
    warnings.extend(tw);
    Ok(Estimate {
        channels: EstimateSet { g1, g2, h1, h2, t },
        warnings,
    })
}

fn random_start(dims: &SystemDims, seed: u64) -> EstimateSet {
    let mut rng = substream(seed, &[0x1A17]);
    let d = dims;
    EstimateSet {
        h1: complex_gaussian_matrix(&mut rng, d.m_bs, d.m_s1, 1.0),
        h2: complex_gaussian_matrix(&mut rng, d.m_bs, d.m_s2, 1.0),
        g2: complex_gaussian_matrix(&mut rng, d.m_s2, d.m_ue, 1.0),
        t: complex_gaussian_matrix(&mut rng, d.m_s2, d.m_s1, 1.0),
        g1: complex_gaussian_matrix(&mut rng, d.m_s1, d.m_ue, 1.0),
    }
}

fn initial_estimate(
    bundle: &MeasurementBundle,
    tr: &TrainingDesign,
    dims: &SystemDims,
    cfg: &AlsConfig,
    warnings: &mut Vec<Warning>,
) -> Result<EstimateSet> {
    match cfg.init {
        AlsInit::Random => Ok(random_start(dims, cfg.seed)),
        AlsInit::Ckraft => {
            let est = ckraft(bundle, tr, dims)?;
            // Identifiability of the closed form does not matter for a warm start.
            warnings.extend(
                est.warnings
                    .into_iter()
                    .filter(|w| !matches!(w, Warning::NotIdentifiable(_))),
            );
            Ok(est.channels)
        }
    }
}

/// Least-squares solve recording a warning if the right factor loses rank.
fn solve(
    y: &ComplexMatrix,
    f: &ComplexMatrix,
    factor: &'static str,
    warnings: &mut Vec<Warning>,
) -> Result<ComplexMatrix> {
    let sol = ls_solve_right(y, f)?;
    if sol.rank < f.nrows() {
        push_unique(
            warnings,
            Warning::RankDeficient {
                factor,
                rank: sol.rank,
                expected: f.nrows(),
            },
        );
    }
    Ok(sol.x)
}

fn extrapolate(from: &EstimateSet, to: &EstimateSet, step: f64) -> EstimateSet {
    let step = Complex::new(step, 0.0);
    let go = |a: &ComplexMatrix, b: &ComplexMatrix| a + (b - a) * step;
    EstimateSet {
        g1: go(&from.g1, &to.g1),
        g2: go(&from.g2, &to.g2),
        h1: go(&from.h1, &to.h1),
        h2: go(&from.h2, &to.h2),
        t: go(&from.t, &to.t),
    }
}

fn sq(m: ComplexMatrix) -> f64 {
    m.norm_squared()
}

/// Stopping and divergence bookkeeping shared by both ALS variants.
struct Monitor {
    trace: AlsTrace,
    floors: (f64, f64),
    tol: f64,
}

impl Monitor {
    fn new(norm1: f64, norm2: f64, tol: f64) -> Self {
        Self {
            trace: AlsTrace::default(),
            floors: (RESIDUAL_FLOOR * norm1, RESIDUAL_FLOOR * norm2),
            tol,
        }
    }

    /// Records one iteration; returns true when the run has converged.
    fn record(&mut self, r1: f64, r2: f64, objective: f64, warnings: &mut Vec<Warning>) -> bool {
        let tr = &mut self.trace;
        tr.iterations_run += 1;
        let it = tr.iterations_run;
        if let Some(&prev) = tr.objective.last() {
            if objective > prev * (1.0 + DIVERGENCE_SLACK) {
                tr.diverged.push(it);
                warnings.push(Warning::Diverged { iteration: it });
            }
        }
        let settled = |hist: &[f64], now: f64, floor: f64| {
            now <= floor || hist.last().is_some_and(|&p| (p - now).abs() <= self.tol * p)
        };
        let done = settled(&tr.residuals_1, r1, self.floors.0)
            && settled(&tr.residuals_2, r2, self.floors.1);
        tr.residuals_1.push(r1);
        tr.residuals_2.push(r2);
        tr.objective.push(objective);
        done
    }
}

/// Squared fit errors `[e1, e2, shared]`; residual `k` is `√(e_k + shared)`.
type Energies = [f64; 3];

/// Runs `sweep` until convergence or `cfg.t_max`, with an optional
/// extrapolation step after each sweep that is kept only if it lowers the
/// objective.
fn drive_als(
    mut est: EstimateSet,
    cfg: &AlsConfig,
    monitor: &mut Monitor,
    warnings: &mut Vec<Warning>,
    mut sweep: impl FnMut(&mut EstimateSet, &mut Vec<Warning>) -> Result<()>,
    energies: impl Fn(&EstimateSet) -> Result<Energies>,
) -> Result<EstimateSet> {
    let mut step = STEP_START;
    for it in 1..=cfg.t_max {
        let start = est.clone();
        sweep(&mut est, warnings)?;
        let mut e = energies(&est)?;
        if cfg.extrapolate && it > 1 {
            let cand = extrapolate(&start, &est, step);
            let ec = energies(&cand)?;
            if ec.iter().sum::<f64>() < e.iter().sum::<f64>() {
                est = cand;
                e = ec;
                step = (step * STEP_GROWTH).min(STEP_MAX);
            } else {
                step = 1.0 + 0.5 * (step - 1.0);
            }
        }
        let [e1, e2, shared] = e;
        let done = monitor.record(
            (e1 + shared).sqrt(),
            (e2 + shared).sqrt(),
            (e1 + e2 + shared).sqrt(),
            warnings,
        );
        if done {
            break;
        }
    }
    Ok(est)
}

/// Coupled alternating least squares.
///
/// Each sweep updates, in order, `G1` from the coupled tensor `Y1`, `H1`
/// from `Y_RIS1`, `H2` from `Y2`, `G2` from `Y_RIS2` and finally `T`. The
/// `Σ` matrices are rebuilt from the latest iterates before they are used,
/// so every step is an exact least-squares minimizer of the joint fit.
pub fn cals(
    bundle: &MeasurementBundle,
    tr: &TrainingDesign,
    dims: &SystemDims,
    cfg: &AlsConfig,
) -> Result<AlsEstimate> {
    cfg.validate()?;
    check_bundle(bundle, tr, dims)?;
    let mut warnings = identifiability_warnings(dims, Method::Cals);
    let init = initial_estimate(bundle, tr, dims, cfg, &mut warnings)?;

    let y1_1 = bundle.y1c.unfold(1)?;
    let y2_1 = bundle.y2c.unfold(1)?;
    let ris1_1 = bundle.y_ris1.unfold(1)?;
    let ris2_2 = bundle.y_ris2.unfold(2)?;
    let y3 = &bundle.y3_gen;
    let (th1, th2) = (&tr.theta1, &tr.theta2);

    let sweep = |est: &mut EstimateSet, warnings: &mut Vec<Warning>| -> Result<()> {
        let sigma1 = build_sigma1(&est.h1, &est.h2, &est.t, th2)?;
        let f = khatri_rao(th1, &sigma1)?.transpose();
        est.g1 = solve(&y1_1, &f, "(Θ1 ⋄ Σ1)ᵀ", warnings)?.transpose();
        let f = khatri_rao(th1, &est.g1.transpose())?.transpose();
        est.h1 = solve(&ris1_1, &f, "(Θ1 ⋄ G1ᵀ)ᵀ", warnings)?;

        let sigma2 = build_sigma2(&est.g2, &est.g1, &est.t, th1)?;
        let f = khatri_rao(th2, &sigma2)?.transpose();
        est.h2 = solve(&y2_1, &f, "(Θ2 ⋄ Σ2)ᵀ", warnings)?;
        let f = khatri_rao(th2, &est.h2)?.transpose();
        est.g2 = solve(&ris2_2, &f, "(Θ2 ⋄ H2)ᵀ", warnings)?.transpose();

        let (t, tw) = estimate_t(y3, &est.g1, &est.h2, tr)?;
        est.t = t;
        tw.into_iter().for_each(|w| push_unique(warnings, w));
        Ok(())
    };
    let energies = |est: &EstimateSet| -> Result<Energies> {
        let kr_g1t = khatri_rao(th1, &est.g1.transpose())?.transpose();
        let kr_h2 = khatri_rao(th2, &est.h2)?;
        Ok([
            sq(&ris1_1 - &est.h1 * &kr_g1t),
            sq(&ris2_2 - est.g2.transpose() * kr_h2.transpose()),
            sq(y3 - &kr_h2 * &est.t * kr_g1t),
        ])
    };

    let mut monitor = Monitor::new(bundle.y1c.norm(), bundle.y2c.norm(), cfg.rel_change_tol);
    let channels = drive_als(init, cfg, &mut monitor, &mut warnings, sweep, energies)?;
    Ok(AlsEstimate {
        channels,
        trace: monitor.trace,
        warnings,
    })
}

/// Uncoupled reference: ALS on each single-reflection tensor by itself,
/// followed by the bilinear fit of `T`.
pub fn baseline_uncoupled(
    bundle: &MeasurementBundle,
    tr: &TrainingDesign,
    dims: &SystemDims,
    cfg: &AlsConfig,
) -> Result<AlsEstimate> {
    cfg.validate()?;
    check_bundle(bundle, tr, dims)?;
    let mut warnings = identifiability_warnings(dims, Method::Baseline);
    let init = initial_estimate(bundle, tr, dims, cfg, &mut warnings)?;

    let ris1_1 = bundle.y_ris1.unfold(1)?;
    let ris1_2 = bundle.y_ris1.unfold(2)?;
    let ris2_1 = bundle.y_ris2.unfold(1)?;
    let ris2_2 = bundle.y_ris2.unfold(2)?;
    let (th1, th2) = (&tr.theta1, &tr.theta2);

    let sweep = |est: &mut EstimateSet, warnings: &mut Vec<Warning>| -> Result<()> {
        let f = khatri_rao(th1, &est.h1)?.transpose();
        est.g1 = solve(&ris1_2, &f, "(Θ1 ⋄ H1)ᵀ", warnings)?.transpose();
        let f = khatri_rao(th1, &est.g1.transpose())?.transpose();
        est.h1 = solve(&ris1_1, &f, "(Θ1 ⋄ G1ᵀ)ᵀ", warnings)?;

        let f = khatri_rao(th2, &est.h2)?.transpose();
        est.g2 = solve(&ris2_2, &f, "(Θ2 ⋄ H2)ᵀ", warnings)?.transpose();
        let f = khatri_rao(th2, &est.g2.transpose())?.transpose();
        est.h2 = solve(&ris2_1, &f, "(Θ2 ⋄ G2ᵀ)ᵀ", warnings)?;
        Ok(())
    };
    let energies = |est: &EstimateSet| -> Result<Energies> {
        let f1 = khatri_rao(th1, &est.g1.transpose())?.transpose();
        let f2 = khatri_rao(th2, &est.g2.transpose())?.transpose();
        Ok([
            sq(&ris1_1 - &est.h1 * f1),
            sq(&ris2_1 - &est.h2 * f2),
            0.0,
        ])
    };

    let mut monitor = Monitor::new(bundle.y_ris1.norm(), bundle.y_ris2.norm(), cfg.rel_change_tol);
    let mut channels = drive_als(init, cfg, &mut monitor, &mut warnings, sweep, energies)?;
    let (t, tw) = estimate_t(&bundle.y3_gen, &channels.g1, &channels.h2, tr)?;
    channels.t = t;
    warnings.extend(tw);
    Ok(AlsEstimate {
        channels,
        trace: monitor.trace,
        warnings,
    })
}
