//! Cascaded-channel metrics, identifiability conditions and the Monte Carlo
//! engine.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    baseline_uncoupled, cals, ckraft, AlsConfig, AlsInit, EstimateSet,
};
use crate::protocol::{
    gen_channels, gen_training, run_protocol_with, ChannelSet, NoiseModel, ProtocolOptions,
    SystemDims, TrainingDesign,
};
use crate::rng::derive_seed;
use crate::tensor::ComplexMatrix;

/// Anything holding the five channel matrices.
pub trait CascadeFactors {
    fn g1(&self) -> &ComplexMatrix;
    fn g2(&self) -> &ComplexMatrix;
    fn h1(&self) -> &ComplexMatrix;
    fn h2(&self) -> &ComplexMatrix;
    fn t(&self) -> &ComplexMatrix;
}

macro_rules! impl_cascade_factors {
    ($ty:ty) => {
        impl CascadeFactors for $ty {
            fn g1(&self) -> &ComplexMatrix {
                &self.g1
            }
            fn g2(&self) -> &ComplexMatrix {
                &self.g2
            }
            fn h1(&self) -> &ComplexMatrix {
                &self.h1
            }
            fn h2(&self) -> &ComplexMatrix {
                &self.h2
            }
            fn t(&self) -> &ComplexMatrix {
                &self.t
            }
        }
    };
}

impl_cascade_factors!(ChannelSet);
impl_cascade_factors!(EstimateSet);

/// End-to-end channels, each `M_BS x M_UE`.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeSet {
    /// `H1 G1`
    pub p1: ComplexMatrix,
    /// `H2 G2`
    pub p2: ComplexMatrix,
    /// `H2 T G1`
    pub p3: ComplexMatrix,
}

impl CascadeSet {
    pub fn components(&self) -> [&ComplexMatrix; 3] {
        [&self.p1, &self.p2, &self.p3]
    }
}

fn mul(a: &ComplexMatrix, b: &ComplexMatrix, what: &str) -> Result<ComplexMatrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} times {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a * b)
}

pub fn cascade<C: CascadeFactors + ?Sized>(c: &C) -> Result<CascadeSet> {
    let p1 = mul(c.h1(), c.g1(), "H1·G1")?;
    let p2 = mul(c.h2(), c.g2(), "H2·G2")?;
    let tg1 = mul(c.t(), c.g1(), "T·G1")?;
    let p3 = mul(c.h2(), &tg1, "H2·T·G1")?;
    let shape = p1.shape();
    if p2.shape() != shape || p3.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "cascades have shapes {:?}, {:?}, {:?}",
            shape,
            p2.shape(),
            p3.shape()
        )));
    }
    Ok(CascadeSet { p1, p2, p3 })
}

/// Squared error and squared truth norm of each cascade.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEnergy {
    pub error: [f64; 3],
    pub truth: [f64; 3],
}

impl ErrorEnergy {
    pub fn nmse(&self) -> [f64; 3] {
        std::array::from_fn(|c| self.error[c] / self.truth[c])
    }
}

pub fn error_energy(est: &CascadeSet, truth: &CascadeSet) -> Result<ErrorEnergy> {
    let mut out = ErrorEnergy {
        error: [0.0; 3],
        truth: [0.0; 3],
    };
    for (c, (e, t)) in est.components().into_iter().zip(truth.components()).enumerate() {
        if e.shape() != t.shape() {
            return Err(Error::ShapeMismatch(format!(
                "estimate {:?} vs truth {:?}",
                e.shape(),
                t.shape()
            )));
        }
        let norm = t.norm_squared();
        if norm == 0.0 {
            return Err(Error::ZeroTruth);
        }
        out.error[c] = (e - t).norm_squared();
        out.truth[c] = norm;
    }
    Ok(out)
}

/// `‖P̂ − P‖²_F / ‖P‖²_F` for the three cascades.
pub fn nmse(est: &CascadeSet, truth: &CascadeSet) -> Result<[f64; 3]> {
    Ok(error_energy(est, truth)?.nmse())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ckraft,
    Cals,
    Baseline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ckraft, Method::Cals, Method::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ckraft => "C-KRAFT",
            Method::Cals => "C-ALS",
            Method::Baseline => "uncoupled ALS",
        }
    }
}

/// One inequality `lhs ≥ rhs` of the identifiability table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub name: String,
    pub lhs: usize,
    pub rhs: usize,
}

impl Condition {
    fn new(name: impl Into<String>, lhs: usize, rhs: usize) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
        }
    }

    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.holds() { "≥" } else { "<" };
        write!(f, "{} ({} {op} {})", self.name, self.lhs, self.rhs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentifiabilityVerdict {
    pub method: Method,
    pub conditions: Vec<Condition>,
}

impl IdentifiabilityVerdict {
    pub fn satisfied(&self) -> bool {
        self.conditions.iter().all(Condition::holds)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.holds())
    }
}

impl fmt::Display for IdentifiabilityVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.satisfied() {
            return write!(f, "{}: satisfied", self.method.name());
        }
        let failed: Vec<String> = self.failed().map(|c| c.to_string()).collect();
        write!(f, "{}: violated on {}", self.method.name(), failed.join(", "))
    }
}

/// `⌈a / b⌉`, with a zero denominator treated as unsatisfiable.
fn ceil_div(a: usize, b: usize) -> usize {
    if b == 0 {
        usize::MAX
    } else {
        a.div_ceil(b)
    }
}

/// Evaluates the training-size conditions of `method` for `dims`.
pub fn check_identifiability(dims: &SystemDims, method: Method) -> IdentifiabilityVerdict {
    let d = dims;
    let (i, j) = (d.i_frames, d.j_frames);
    let mut conditions = vec![
        Condition::new("I ≥ 2", i, 2),
        Condition::new("J ≥ 2", j, 2),
        Condition::new("K ≥ M_UE", d.k_pilots, d.m_ue),
        Condition::new("I ≥ ⌈M_S1/M_UE⌉", i, ceil_div(d.m_s1, d.m_ue)),
        Condition::new("J ≥ ⌈M_S2/M_BS⌉", j, ceil_div(d.m_s2, d.m_bs)),
    ];
    match method {
        Method::Ckraft => {
            conditions.push(Condition::new("I ≥ M_S1", i, d.m_s1));
            conditions.push(Condition::new("J ≥ M_S2", j, d.m_s2));
        }
        Method::Cals => {
            let rows1 = (j + 1).saturating_mul(d.m_bs);
            let rows2 = (i + 1).saturating_mul(d.m_ue);
            conditions.push(Condition::new("I ≥ ⌈M_S1/((J+1)M_BS)⌉", i, ceil_div(d.m_s1, rows1)));
            conditions.push(Condition::new("J ≥ ⌈M_S2/((I+1)M_UE)⌉", j, ceil_div(d.m_s2, rows2)));
        }
        Method::Baseline => {
            conditions.push(Condition::new("I ≥ ⌈M_S1/M_BS⌉", i, ceil_div(d.m_s1, d.m_bs)));
            conditions.push(Condition::new("J ≥ ⌈M_S2/M_UE⌉", j, ceil_div(d.m_s2, d.m_ue)));
        }
    }
    IdentifiabilityVerdict { method, conditions }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Ckraft,
    CalsRandom,
    CalsCkraftInit,
    BaselineUncoupled,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Ckraft,
        EstimatorKind::CalsRandom,
        EstimatorKind::CalsCkraftInit,
        EstimatorKind::BaselineUncoupled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ckraft => "ckraft",
            EstimatorKind::CalsRandom => "cals_random",
            EstimatorKind::CalsCkraftInit => "cals_ckraft_init",
            EstimatorKind::BaselineUncoupled => "baseline_uncoupled",
        }
    }

    pub fn method(self) -> Method {
        match self {
            EstimatorKind::Ckraft => Method::Ckraft,
            EstimatorKind::CalsRandom | EstimatorKind::CalsCkraftInit => Method::Cals,
            EstimatorKind::BaselineUncoupled => Method::Baseline,
        }
    }

    /// Runs the estimator on one measurement bundle.
    pub fn estimate(
        self,
        bundle: &crate::protocol::MeasurementBundle,
        tr: &TrainingDesign,
        dims: &SystemDims,
        als: &AlsConfig,
    ) -> Result<EstimateSet> {
        let init = |init| AlsConfig { init, ..*als };
        Ok(match self {
            EstimatorKind::Ckraft => ckraft(bundle, tr, dims)?.channels,
            EstimatorKind::CalsRandom => cals(bundle, tr, dims, &init(AlsInit::Random))?.channels,
            EstimatorKind::CalsCkraftInit => cals(bundle, tr, dims, &init(AlsInit::Ckraft))?.channels,
            EstimatorKind::BaselineUncoupled => {
                baseline_uncoupled(bundle, tr, dims, &init(AlsInit::Random))?.channels
            }
        })
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
                Error::Format(format!("unknown estimator {s:?}, expected one of {}", names.join(", ")))
            })
    }
}

pub const COMPONENTS: [&str; 3] = ["p1", "p2", "p3"];

/// Aggregates at one SNR point.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrPoint {
    pub snr_db: f64,
    /// Per-trial NMSE of each cascade, successful trials only, in trial order.
    pub samples: Vec<[f64; 3]>,
    error_sum: [f64; 3],
    truth_sum: [f64; 3],
    pub trials: usize,
    pub failures: usize,
}

impl SnrPoint {
    /// Ratio of the summed squared errors to the summed truth energies.
    pub fn mean(&self) -> [f64; 3] {
        std::array::from_fn(|c| {
            if self.samples.is_empty() {
                f64::NAN
            } else {
                self.error_sum[c] / self.truth_sum[c]
            }
        })
    }

    pub fn median(&self) -> [f64; 3] {
        std::array::from_fn(|c| {
            let mut v: Vec<f64> = self.samples.iter().map(|s| s[c]).collect();
            median(&mut v)
        })
    }
}

/// Folds per-trial outcomes (`None` for a failed trial) into an [`SnrPoint`].
pub fn aggregate(snr_db: f64, outcomes: impl IntoIterator<Item = Option<ErrorEnergy>>) -> SnrPoint {
    let mut point = SnrPoint {
        snr_db,
        samples: Vec::new(),
        error_sum: [0.0; 3],
        truth_sum: [0.0; 3],
        trials: 0,
        failures: 0,
    };
    for outcome in outcomes {
        point.trials += 1;
        match outcome {
            Some(en) => {
                for c in 0..3 {
                    point.error_sum[c] += en.error[c];
                    point.truth_sum[c] += en.truth[c];
                }
                point.samples.push(en.nmse());
            }
            None => point.failures += 1,
        }
    }
    point
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmseReport {
    pub estimator: EstimatorKind,
    pub dims: SystemDims,
    pub seed: u64,
    pub trials: usize,
    pub points: Vec<SnrPoint>,
}

/// Everything a sweep needs besides dims and seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub als: AlsConfig,
    pub protocol: ProtocolOptions,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            als: AlsConfig::default(),
            protocol: ProtocolOptions::default(),
        }
    }
}

const CHANNEL_TAG: u64 = 0;
const NOISE_TAG: u64 = 1;
const INIT_TAG: u64 = 2;

type TrialResult = Option<ErrorEnergy>;

fn run_trial(
    dims: &SystemDims,
    tr: &TrainingDesign,
    snr_db: f64,
    estimators: &[EstimatorKind],
    cfg: &MonteCarloConfig,
    trial_seed: impl Fn(u64) -> u64,
) -> Result<Vec<TrialResult>> {
    let ch = gen_channels(dims, trial_seed(CHANNEL_TAG));
    let truth = cascade(&ch)?;
    let noise = NoiseModel::from_snr_db(snr_db, trial_seed(NOISE_TAG));
    let bundle = run_protocol_with(&ch, tr, &noise, cfg.protocol)?;
    let als = AlsConfig {
        seed: trial_seed(INIT_TAG),
        ..cfg.als
    };
    Ok(estimators
        .iter()
        .map(|k| {
            let est = k.estimate(&bundle, tr, dims, &als).ok()?;
            if !est.is_finite() {
                return None;
            }
            let energy = error_energy(&cascade(&est).ok()?, &truth).ok()?;
            energy.nmse().iter().all(|v| v.is_finite()).then_some(energy)
        })
        .collect())
}

/// Sweeps `snr_grid_db` for several estimators on shared trials.
///
/// Trial `t` at SNR index `s` draws its channels, noise and random ALS start
/// from substreams of `(seed, s, t)`, so every estimator sees the same data
/// and the result does not depend on thread scheduling. Trials whose
/// estimator errors out or returns non-finite values are counted as
/// failures and left out of the statistics.
pub fn run_monte_carlo_multi(
    dims: &SystemDims,
    snr_grid_db: &[f64],
    estimators: &[EstimatorKind],
    cfg: &MonteCarloConfig,
    seed: u64,
) -> Result<Vec<NmseReport>> {
    dims.validate()?;
    cfg.als.validate()?;
    if cfg.trials == 0 {
        return Err(Error::Dim("trials must be ≥ 1".into()));
    }
    if let Some(bad) = snr_grid_db.iter().find(|s| !s.is_finite()) {
        return Err(Error::Dim(format!("SNR {bad} dB is not finite")));
    }
    let tr = gen_training(dims)?;
    let jobs: Vec<(usize, usize)> = (0..snr_grid_db.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let outcomes: Vec<Vec<TrialResult>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let trial_seed = |tag| derive_seed(seed, &[s as u64, t as u64, tag]);
            run_trial(dims, &tr, snr_grid_db[s], estimators, cfg, trial_seed)
        })
        .collect::<Result<_>>()?;

    let reports = estimators
        .iter()
        .enumerate()
        .map(|(e, &estimator)| {
            let points = snr_grid_db
                .iter()
                .enumerate()
                .map(|(s, &snr_db)| {
                    let trials = &outcomes[s * cfg.trials..(s + 1) * cfg.trials];
                    aggregate(snr_db, trials.iter().map(|o| o[e]))
                })
                .collect();
            NmseReport {
                estimator,
                dims: *dims,
                seed,
                trials: cfg.trials,
                points,
            }
        })
        .collect();
    Ok(reports)
}

pub fn run_monte_carlo(
    dims: &SystemDims,
    snr_grid_db: &[f64],
    estimator: EstimatorKind,
    cfg: &MonteCarloConfig,
    seed: u64,
) -> Result<NmseReport> {
    let mut reports = run_monte_carlo_multi(dims, snr_grid_db, &[estimator], cfg, seed)?;
    Ok(reports.remove(0))
}

pub const CSV_HEADER: [&str; 7] = [
    "estimator",
    "snr_db",
    "component",
    "statistic",
    "value",
    "trials",
    "failures",
];

/// Writes one row per (estimator, SNR, component, statistic) with the
/// columns of [`CSV_HEADER`]. `statistic` is `mean` or `median`.
pub fn write_csv<W: Write>(reports: &[NmseReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        for p in &r.points {
            let stats = [("mean", p.mean()), ("median", p.median())];
            for (c, comp) in COMPONENTS.iter().enumerate() {
                for (stat, values) in &stats {
                    w.write_record([
                        r.estimator.name(),
                        &p.snr_db.to_string(),
                        comp,
                        stat,
                        &values[c].to_string(),
                        &p.trials.to_string(),
                        &p.failures.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::gen_channels;
    use crate::tensor::{rel_diff, Complex};
    use crate::test_util::random_matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(m_s1: usize, m_s2: usize, i: usize, j: usize) -> SystemDims {
        SystemDims {
            m_bs: 4,
            m_ue: 2,
            m_s1,
            m_s2,
            i_frames: i,
            j_frames: j,
            k_pilots: 2,
        }
    }

    fn operating_point(i: usize, j: usize) -> SystemDims {
        dims(30, 20, i, j)
    }

    fn naive_mul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix::from_fn(a.nrows(), b.ncols(), |r, c| {
            (0..a.ncols()).fold(Complex::new(0.0, 0.0), |acc, k| acc + a[(r, k)] * b[(k, c)])
        })
    }

    fn random_set(seed: u64, m_bs: usize, m_ue: usize, m_s1: usize, m_s2: usize) -> EstimateSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EstimateSet {
            g1: random_matrix(&mut rng, m_s1, m_ue),
            g2: random_matrix(&mut rng, m_s2, m_ue),
            h1: random_matrix(&mut rng, m_bs, m_s1),
            h2: random_matrix(&mut rng, m_bs, m_s2),
            t: random_matrix(&mut rng, m_s2, m_s1),
        }
    }

    fn diag(seed: u64, n: usize) -> (ComplexMatrix, ComplexMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_matrix(&mut rng, n, 1).map(|z| z + Complex::new(0.5, 0.0));
        let inv = d.map(|z| Complex::new(1.0, 0.0) / z);
        (
            ComplexMatrix::from_diagonal(&d.column(0).into_owned()),
            ComplexMatrix::from_diagonal(&inv.column(0).into_owned()),
        )
    }

    #[test]
    fn identity_channels_give_identity_cascade() {
        let eye = ComplexMatrix::identity(3, 3);
        let set = EstimateSet {
            g1: eye.clone(),
            g2: eye.clone(),
            h1: eye.clone(),
            h2: eye.clone(),
            t: eye.clone(),
        };
        let c = cascade(&set).unwrap();
        assert_eq!(c.p1, eye);
    }

    #[test]
    fn cascade_matches_direct_products() {
        let set = random_set(1, 3, 2, 5, 4);
        let c = cascade(&set).unwrap();
        assert!(rel_diff(&c.p1, &naive_mul(&set.h1, &set.g1)) <= 1e-14);
        assert!(rel_diff(&c.p2, &naive_mul(&set.h2, &set.g2)) <= 1e-14);
        let p3 = naive_mul(&naive_mul(&set.h2, &set.t), &set.g1);
        assert!(rel_diff(&c.p3, &p3) <= 1e-14);
    }

    #[test]
    fn cascade_rejects_bad_shapes() {
        let mut set = random_set(2, 3, 2, 5, 4);
        set.t = ComplexMatrix::zeros(4, 4);
        assert!(matches!(cascade(&set), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn p3_survives_rescaling_through_t() {
        let set = random_set(3, 4, 2, 6, 5);
        let (d1, d1_inv) = diag(4, 6);
        let (d2, d2_inv) = diag(5, 5);
        let scaled = EstimateSet {
            g1: &d1 * &set.g1,
            h2: &set.h2 * &d2,
            t: &d2_inv * &set.t * &d1_inv,
            ..set.clone()
        };
        let (a, b) = (cascade(&set).unwrap(), cascade(&scaled).unwrap());
        assert!(rel_diff(&b.p3, &a.p3) <= 1e-12);
    }

    proptest! {
        #[test]
        fn cascades_ignore_factor_ambiguities(seed in any::<u64>()) {
            let set = random_set(seed, 4, 2, 6, 5);
            let (d1, d1_inv) = diag(seed ^ 1, 6);
            let (d2, d2_inv) = diag(seed ^ 2, 5);
            let scaled = EstimateSet {
                g1: &d1 * &set.g1,
                h1: &set.h1 * &d1_inv,
                g2: &d2_inv * &set.g2,
                h2: &set.h2 * &d2,
                t: &d2_inv * &set.t * &d1_inv,
            };
            let (a, b) = (cascade(&set).unwrap(), cascade(&scaled).unwrap());
            for (x, y) in a.components().into_iter().zip(b.components()) {
                prop_assert!(rel_diff(y, x) <= 1e-12);
            }
        }

        #[test]
        fn nmse_is_nonnegative(seed in any::<u64>()) {
            let a = cascade(&random_set(seed, 3, 2, 4, 3)).unwrap();
            let b = cascade(&random_set(seed ^ 7, 3, 2, 4, 3)).unwrap();
            prop_assert!(nmse(&a, &b).unwrap().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn nmse_of_truth_is_zero() {
        let c = cascade(&random_set(6, 3, 2, 4, 3)).unwrap();
        assert_eq!(nmse(&c, &c).unwrap(), [0.0; 3]);
    }

    #[test]
    fn nmse_of_zero_estimate_is_one() {
        let c = cascade(&random_set(7, 3, 2, 4, 3)).unwrap();
        let z = ComplexMatrix::zeros(3, 2);
        let zero = CascadeSet {
            p1: z.clone(),
            p2: z.clone(),
            p3: z,
        };
        assert_eq!(nmse(&zero, &c).unwrap(), [1.0; 3]);
    }

    #[test]
    fn nmse_of_scaled_perturbation() {
        let truth = cascade(&random_set(8, 3, 2, 4, 3)).unwrap();
        let noise = cascade(&random_set(9, 3, 2, 4, 3)).unwrap();
        let e = 0.3;
        let perturb = |p: &ComplexMatrix, n: &ComplexMatrix| {
            p + n * Complex::new(e * p.norm() / n.norm(), 0.0)
        };
        let est = CascadeSet {
            p1: perturb(&truth.p1, &noise.p1),
            p2: perturb(&truth.p2, &noise.p2),
            p3: perturb(&truth.p3, &noise.p3),
        };
        for v in nmse(&est, &truth).unwrap() {
            assert!((v - e * e).abs() <= 1e-14);
        }
    }

    #[test]
    fn nmse_rejects_zero_truth() {
        let c = cascade(&random_set(10, 3, 2, 4, 3)).unwrap();
        let zero = CascadeSet {
            p1: ComplexMatrix::zeros(3, 2),
            ..c.clone()
        };
        assert!(matches!(nmse(&c, &zero), Err(Error::ZeroTruth)));
    }

    #[test]
    fn full_training_passes_every_method() {
        for m in Method::ALL {
            let v = check_identifiability(&operating_point(30, 20), m);
            assert!(v.satisfied(), "{v}");
        }
    }

    #[test]
    fn short_training_fails_only_ckraft() {
        let d = operating_point(25, 15);
        let ck = check_identifiability(&d, Method::Ckraft);
        let failed: Vec<&str> = ck.failed().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["I ≥ M_S1", "J ≥ M_S2"]);
        assert!(check_identifiability(&d, Method::Cals).satisfied());
        let i_bound = check_identifiability(&d, Method::Cals)
            .conditions
            .iter()
            .filter(|c| c.name.starts_with("I ≥"))
            .map(|c| c.rhs)
            .max();
        assert_eq!(i_bound, Some(15));
    }

    #[test]
    fn single_frame_fails_everywhere() {
        for m in Method::ALL {
            let v = check_identifiability(&operating_point(1, 20), m);
            assert!(v.failed().any(|c| c.name == "I ≥ 2"));
            assert!(v.to_string().contains("violated on I ≥ 2"));
        }
    }

    #[test]
    fn baseline_needs_more_training_than_cals() {
        // J·M_UE < M_S2 but J·M_BS ≥ M_S2
        let d = dims(8, 16, 8, 4);
        assert!(check_identifiability(&d, Method::Cals).satisfied());
        let base = check_identifiability(&d, Method::Baseline);
        let failed: Vec<&str> = base.failed().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["J ≥ ⌈M_S2/M_UE⌉"]);
    }

    #[test]
    fn zero_antennas_never_panic() {
        let d = SystemDims {
            m_bs: 0,
            m_ue: 0,
            ..operating_point(30, 20)
        };
        for m in Method::ALL {
            assert!(!check_identifiability(&d, m).satisfied());
        }
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("als".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn aggregate_counts_and_excludes_failures() {
        let ok = |e: f64| {
            Some(ErrorEnergy {
                error: [e; 3],
                truth: [2.0; 3],
            })
        };
        let p = aggregate(10.0, [ok(1.0), None, ok(3.0), ok(0.2)]);
        assert_eq!((p.trials, p.failures, p.samples.len()), (4, 1, 3));
        assert_eq!(p.mean(), [4.2 / 6.0; 3]);
        assert_eq!(p.median(), [0.5; 3]);
        let p = aggregate(10.0, [None, None]);
        assert!(p.mean()[0].is_nan() && p.median()[0].is_nan());
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    fn small_cfg(trials: usize) -> MonteCarloConfig {
        MonteCarloConfig {
            trials,
            ..MonteCarloConfig::default()
        }
    }

    #[test]
    fn near_noiseless_ckraft_is_exact() {
        let r = run_monte_carlo(&dims(8, 6, 8, 6), &[200.0], EstimatorKind::Ckraft, &small_cfg(10), 1)
            .unwrap();
        assert_eq!(r.points[0].failures, 0);
        for v in r.points[0].median() {
            assert!(v <= 1e-15, "{v}");
        }
    }

    #[test]
    fn same_seed_same_report() {
        let d = dims(6, 4, 6, 4);
        let run = |seed| {
            run_monte_carlo_multi(&d, &[0.0, 10.0], &EstimatorKind::ALL, &small_cfg(6), seed).unwrap()
        };
        let a = run(5);
        assert_eq!(a, run(5));
        assert_ne!(a, run(6));
    }

    #[test]
    fn estimators_see_paired_trials() {
        let d = dims(6, 4, 6, 4);
        let multi = run_monte_carlo_multi(&d, &[10.0], &EstimatorKind::ALL, &small_cfg(5), 9).unwrap();
        let single =
            run_monte_carlo(&d, &[10.0], EstimatorKind::BaselineUncoupled, &small_cfg(5), 9).unwrap();
        assert_eq!(multi[3], single);
    }

    #[test]
    fn cals_median_falls_with_snr() {
        let r = run_monte_carlo(
            &dims(8, 6, 8, 6),
            &[0.0, 10.0, 20.0, 30.0],
            EstimatorKind::CalsRandom,
            &small_cfg(200),
            3,
        )
        .unwrap();
        let medians: Vec<[f64; 3]> = r.points.iter().map(SnrPoint::median).collect();
        for w in medians.windows(2) {
            assert!(w[1].iter().zip(&w[0]).all(|(hi, lo)| hi < lo), "{medians:?}");
        }
    }

    #[test]
    fn sweep_rejects_bad_arguments() {
        let d = dims(6, 4, 6, 4);
        let k = EstimatorKind::Ckraft;
        assert!(run_monte_carlo(&d, &[0.0], k, &small_cfg(0), 0).is_err());
        assert!(run_monte_carlo(&d, &[f64::NAN], k, &small_cfg(1), 0).is_err());
        assert!(run_monte_carlo(&dims(6, 4, 1, 4), &[0.0], k, &small_cfg(1), 0).is_err());
    }

    #[test]
    fn csv_has_one_row_per_statistic() {
        let d = dims(6, 4, 6, 4);
        let reports =
            run_monte_carlo_multi(&d, &[0.0, 10.0], &[EstimatorKind::Ckraft, EstimatorKind::CalsRandom], &small_cfg(3), 2)
                .unwrap();
        let mut buf = Vec::new();
        write_csv(&reports, &mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2 * 2 * 3 * 2);
        let first = &rows[0];
        assert_eq!(&first[0], "ckraft");
        assert_eq!(&first[1], "0");
        assert_eq!(&first[2], "p1");
        assert_eq!(&first[3], "mean");
        let mean: f64 = first[4].parse().unwrap();
        assert_eq!(mean, reports[0].points[0].mean()[0]);
        assert_eq!((&first[5], &first[6]), ("3", "0"));
    }

    #[test]
    fn generated_channels_have_nonzero_cascades() {
        let ch = gen_channels(&dims(4, 3, 4, 3), 11);
        let c = cascade(&ch).unwrap();
        assert!(c.components().iter().all(|p| p.norm() > 0.0));
    }
}
