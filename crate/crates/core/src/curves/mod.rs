//! Curve models and the fitted-parameter similarity score.
//!
//! Training curves are fitted with `y = a * exp(-b * x) + c`, validation
//! curves with a degree-5 polynomial. Two fits of the same family are compared
//! by the mean squared difference of their parameter vectors.

mod exponential;
mod polynomial;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nnet::LossCurve;

pub use exponential::{
    fit_exponential, fit_exponential_traced, ExpFitTrace, AMPLITUDE_FLOOR, CONVERGENCE_TOLERANCE, MAX_ITERATIONS,
};
pub use polynomial::{eval_poly, fit_poly5, normalized_axis};

#[derive(Debug, thiserror::Error)]
pub enum CurveError {
    #[error("cannot compare a {reference} fit with a {candidate} fit")]
    ModelFamilyMismatch { reference: CurveModel, candidate: CurveModel },
    #[error("curve {index} has {found} epochs, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, found: usize },
    #[error("{0}")]
    Empty(String),
    #[error("fit file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, CurveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveModel {
    Exponential,
    Poly5,
}

impl CurveModel {
    pub fn name(self) -> &'static str {
        match self {
            CurveModel::Exponential => "exp",
            CurveModel::Poly5 => "poly5",
        }
    }

    pub fn fit(self, curve: &[f64]) -> FitOutcome {
        match self {
            CurveModel::Exponential => fit_exponential(curve),
            CurveModel::Poly5 => fit_poly5(curve),
        }
    }
}

impl fmt::Display for CurveModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveModel {
    type Err = CurveError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exp" | "exponential" => Ok(CurveModel::Exponential),
            "poly5" | "polynomial" => Ok(CurveModel::Poly5),
            other => Err(CurveError::Format(format!("unknown model {other:?} (exp, poly5)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFitParams {
    pub a: f64,
    /// Decay per epoch; positive in every successful fit.
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyFitParams {
    /// `c0..c5`, lowest degree first, over the normalized epoch axis.
    pub coefficients: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitParams {
    Exponential(ExpFitParams),
    Poly5(PolyFitParams),
}

impl FitParams {
    pub fn model(&self) -> CurveModel {
        match self {
            FitParams::Exponential(_) => CurveModel::Exponential,
            FitParams::Poly5(_) => CurveModel::Poly5,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            FitParams::Exponential(p) => vec![p.a, p.b, p.c],
            FitParams::Poly5(p) => p.coefficients.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitFailure {
    NonConvergence,
    NonPositiveDecay,
    NonFinite,
    TooFewPoints,
}

impl FitFailure {
    pub fn name(self) -> &'static str {
        match self {
            FitFailure::NonConvergence => "non_convergence",
            FitFailure::NonPositiveDecay => "non_positive_decay",
            FitFailure::NonFinite => "non_finite",
            FitFailure::TooFewPoints => "too_few_points",
        }
    }

    const ALL: [FitFailure; 4] = [
        FitFailure::NonConvergence,
        FitFailure::NonPositiveDecay,
        FitFailure::NonFinite,
        FitFailure::TooFewPoints,
    ];
}

impl fmt::Display for FitFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Success { params: FitParams, residual_sse: f64 },
    Failure { model: CurveModel, reason: FitFailure },
}

impl FitOutcome {
    pub fn model(&self) -> CurveModel {
        match self {
            FitOutcome::Success { params, .. } => params.model(),
            FitOutcome::Failure { model, .. } => *model,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, FitOutcome::Success { .. })
    }

    pub fn params(&self) -> Option<&FitParams> {
        match self {
            FitOutcome::Success { params, .. } => Some(params),
            FitOutcome::Failure { .. } => None,
        }
    }
}

/// Mean squared parameter difference; finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && value >= 0.0).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Rendered as the score, or `---` when either fit failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Similarity {
    Score(SimilarityScore),
    Undefined,
}

pub const UNDEFINED_CELL: &str = "---";

impl Similarity {
    pub fn value(self) -> Option<f64> {
        match self {
            Similarity::Score(s) => Some(s.value()),
            Similarity::Undefined => None,
        }
    }

    pub fn is_undefined(self) -> bool {
        self == Similarity::Undefined
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // shortest repr that parses back to the same bits
            Similarity::Score(s) => write!(f, "{:?}", s.value()),
            Similarity::Undefined => f.write_str(UNDEFINED_CELL),
        }
    }
}

impl FromStr for Similarity {
    type Err = CurveError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == UNDEFINED_CELL {
            return Ok(Similarity::Undefined);
        }
        s.parse::<f64>()
            .ok()
            .and_then(SimilarityScore::new)
            .map(Similarity::Score)
            .ok_or_else(|| CurveError::Format(format!("bad similarity cell {s:?}")))
    }
}

pub fn parameter_mse(reference: &[f64], candidate: &[f64]) -> f64 {
    debug_assert_eq!(reference.len(), candidate.len());
    reference
        .iter()
        .zip(candidate)
        .map(|(r, c)| (r - c) * (r - c))
        .sum::<f64>()
        / reference.len() as f64
}

pub fn similarity(reference: &FitOutcome, candidate: &FitOutcome) -> Result<Similarity> {
    if reference.model() != candidate.model() {
        return Err(CurveError::ModelFamilyMismatch {
            reference: reference.model(),
            candidate: candidate.model(),
        });
    }
    Ok(match (reference.params(), candidate.params()) {
        (Some(r), Some(c)) => SimilarityScore::new(parameter_mse(&r.to_vec(), &c.to_vec()))
            .map_or(Similarity::Undefined, Similarity::Score),
        _ => Similarity::Undefined,
    })
}

/// How repeated runs become one score per table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Average the curves over repetitions, fit once.
    #[default]
    AverageThenFit,
    /// Fit every run and average the parameter vectors; any failed run makes
    /// the cell a failure.
    FitThenAverage,
}

pub fn mean_curve(curves: &[LossCurve]) -> Result<LossCurve> {
    let first = curves
        .first()
        .ok_or_else(|| CurveError::Empty("mean of zero curves".into()))?;
    let epochs = first.epochs();
    let mut train = vec![0.0; epochs];
    let mut val = vec![0.0; epochs];
    for (index, c) in curves.iter().enumerate() {
        if c.epochs() != epochs {
            return Err(CurveError::LengthMismatch {
                index,
                expected: epochs,
                found: c.epochs(),
            });
        }
        for (s, v) in train.iter_mut().zip(&c.train_loss) {
            *s += v;
        }
        for (s, v) in val.iter_mut().zip(&c.val_loss) {
            *s += v;
        }
    }
    let n = curves.len() as f64;
    train.iter_mut().for_each(|v| *v /= n);
    val.iter_mut().for_each(|v| *v /= n);
    Ok(LossCurve::new(train, val).expect("equal lengths"))
}

/// Fits every run and averages the parameter vectors. The first failing run
/// (in order) decides the outcome.
pub fn fit_then_average(model: CurveModel, curves: &[&[f64]]) -> Result<FitOutcome> {
    if curves.is_empty() {
        return Err(CurveError::Empty("no curves to fit".into()));
    }
    let mut sum: Vec<f64> = Vec::new();
    let mut sse = 0.0;
    for c in curves {
        match model.fit(c) {
            FitOutcome::Success { params, residual_sse } => {
                let v = params.to_vec();
                if sum.is_empty() {
                    sum = vec![0.0; v.len()];
                }
                sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
                sse += residual_sse;
            }
            failure => return Ok(failure),
        }
    }
    let n = curves.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    Ok(FitOutcome::Success {
        params: params_from_slice(model, &mean).expect("length matches model"),
        residual_sse: sse / n,
    })
}

fn params_from_slice(model: CurveModel, v: &[f64]) -> Option<FitParams> {
    match model {
        CurveModel::Exponential if v.len() == 3 => Some(FitParams::Exponential(ExpFitParams {
            a: v[0],
            b: v[1],
            c: v[2],
        })),
        CurveModel::Poly5 if v.len() == 6 => Some(FitParams::Poly5(PolyFitParams {
            coefficients: v.try_into().ok()?,
        })),
        _ => None,
    }
}

const FIT_HEADER: [&str; 9] = ["model", "status", "p0", "p1", "p2", "p3", "p4", "p5", "residual_sse"];

/// `model,status,p0..p5,residual_sse`; status is `ok` or the failure reason.
pub fn write_fit_csv(outcomes: &[FitOutcome], out: impl Write) -> Result<()> {
    let err = |e: csv::Error| CurveError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_HEADER).map_err(err)?;
    for o in outcomes {
        let mut row = vec![o.model().name().to_string()];
        match o {
            FitOutcome::Success { params, residual_sse } => {
                row.push("ok".into());
                let v = params.to_vec();
                row.extend((0..6).map(|i| v.get(i).map_or(String::new(), |x| format!("{x:?}"))));
                row.push(format!("{residual_sse:?}"));
            }
            FitOutcome::Failure { reason, .. } => {
                row.push(reason.name().into());
                row.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CurveError::Format(e.to_string()))
}

pub fn read_fit_csv(input: impl Read) -> Result<Vec<FitOutcome>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| CurveError::Format(e.to_string()))?;
    if header.iter().ne(FIT_HEADER) {
        return Err(CurveError::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let bad = |m: String| CurveError::Format(format!("row {}: {m}", row + 1));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let model: CurveModel = rec[0].parse()?;
        if &rec[1] == "ok" {
            let width = match model {
                CurveModel::Exponential => 3,
                CurveModel::Poly5 => 6,
            };
            let values = (2..2 + width)
                .map(|i| rec[i].parse::<f64>().map_err(|_| bad(format!("bad parameter {:?}", &rec[i]))))
                .collect::<Result<Vec<f64>>>()?;
            let residual_sse = rec[8]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad residual {:?}", &rec[8])))?;
            out.push(FitOutcome::Success {
                params: params_from_slice(model, &values).expect("width matches"),
                residual_sse,
            });
        } else {
            let reason = FitFailure::ALL
                .into_iter()
                .find(|f| f.name() == &rec[1])
                .ok_or_else(|| bad(format!("unknown status {:?}", &rec[1])))?;
            out.push(FitOutcome::Failure { model, reason });
        }
    }
    Ok(out)
}
