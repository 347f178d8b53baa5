//! Per-language adaptive piecewise-linear (APL) activation functions.
//!
//! An APL unit set evaluates `F(x) = max(0, x) + sum_i lambda[i] * max(0, -x + b[i])`
//! where both the coordinates `lambda` and the breakpoints `b` are trainable.
//! With `lambda = 0` this reduces exactly to ReLU, which is also how fresh
//! activations are initialized (small coordinates, evenly spread breakpoints).

use crate::numeric::Matrix;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ActivationError {
    #[error("lambda has {lambda} entries but breakpoints has {breakpoints}")]
    MismatchedUnits { lambda: usize, breakpoints: usize },
    #[error("at least one unit is required")]
    Empty,
    #[error("lambda has {lambda} entries but {bases} basis functions were given")]
    BasisMismatch { lambda: usize, bases: usize },
    #[error("non-finite parameter value")]
    NonFinite,
}

/// Default number of APL units per activation.
pub const DEFAULT_UNIT_COUNT: usize = 5;

/// Half-width of the uniform initialization range for `lambda`.
pub const LAMBDA_INIT_RANGE: f64 = 0.05;

/// Trainable activation parameters for one (layer, language) pair.
///
/// A single parameter set is shared by every unit of the layer; the function
/// is applied elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AplActivation {
    pub lambda: Vec<f64>,
    pub breakpoints: Vec<f64>,
}

/// Gradients of one scalar APL evaluation.
#[derive(Debug, Clone)]
pub struct AplGrad {
    pub dx: f64,
    pub dlambda: Vec<f64>,
    pub dbreakpoints: Vec<f64>,
}

impl AplActivation {
    pub fn new(lambda: Vec<f64>, breakpoints: Vec<f64>) -> Result<Self, ActivationError> {
        if lambda.len() != breakpoints.len() {
            return Err(ActivationError::MismatchedUnits {
                lambda: lambda.len(),
                breakpoints: breakpoints.len(),
            });
        }
        if lambda.is_empty() {
            return Err(ActivationError::Empty);
        }
        if !lambda.iter().chain(&breakpoints).all(|v| v.is_finite()) {
            return Err(ActivationError::NonFinite);
        }
        Ok(AplActivation { lambda, breakpoints })
    }

    /// Breakpoints evenly spread over [-1, 1], zero coordinates: exact ReLU.
    pub fn relu_like(unit_count: usize) -> Self {
        AplActivation {
            lambda: vec![0.0; unit_count],
            breakpoints: spread_breakpoints(unit_count),
        }
    }

    /// Fresh near-ReLU activation: `lambda ~ U(-0.05, 0.05)`, breakpoints
    /// evenly spread over [-1, 1].
    pub fn init<R: Rng>(unit_count: usize, rng: &mut R) -> Self {
        AplActivation {
            lambda: (0..unit_count)
                .map(|_| rng.random_range(-LAMBDA_INIT_RANGE..LAMBDA_INIT_RANGE))
                .collect(),
            breakpoints: spread_breakpoints(unit_count),
        }
    }

    pub fn unit_count(&self) -> usize {
        self.lambda.len()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let mut y = x.max(0.0);
        for (&l, &b) in self.lambda.iter().zip(&self.breakpoints) {
            y += l * (b - x).max(0.0);
        }
        y
    }

    pub fn eval_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    pub fn eval_matrix(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| self.eval(m.get(i, j)))
    }

    /// Gradients of `upstream * F(x)` with respect to the input and both
    /// parameter vectors. The subgradient at every kink is fixed to zero
    /// (strict `>` indicators).
    pub fn grad(&self, x: f64, upstream: f64) -> AplGrad {
        let m = self.unit_count();
        let mut dx = if x > 0.0 { 1.0 } else { 0.0 };
        let mut dlambda = vec![0.0; m];
        let mut dbreakpoints = vec![0.0; m];
        for i in 0..m {
            let hinge = self.breakpoints[i] - x;
            if hinge > 0.0 {
                dx -= self.lambda[i];
                dlambda[i] = upstream * hinge;
                dbreakpoints[i] = upstream * self.lambda[i];
            }
        }
        AplGrad {
            dx: upstream * dx,
            dlambda,
            dbreakpoints,
        }
    }

    /// Input derivative only, for backward passes that accumulate parameter
    /// gradients separately.
    #[inline]
    pub fn input_derivative(&self, x: f64) -> f64 {
        let mut d = if x > 0.0 { 1.0 } else { 0.0 };
        for (&l, &b) in self.lambda.iter().zip(&self.breakpoints) {
            if b - x > 0.0 {
                d -= l;
            }
        }
        d
    }

    /// Pointwise samples of the activation curve, for plotting.
    pub fn curve(&self, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter().map(|&x| (x, self.eval(x))).collect()
    }
}

fn spread_breakpoints(unit_count: usize) -> Vec<f64> {
    if unit_count == 1 {
        return vec![0.0];
    }
    let step = 2.0 / (unit_count as f64 - 1.0);
    (0..unit_count).map(|i| -1.0 + step * i as f64).collect()
}

/// A named scalar basis function for the general weighted-sum activation form.
pub struct BasisFunction {
    pub name: String,
    pub func: Box<dyn Fn(f64) -> f64>,
}

impl BasisFunction {
    pub fn new(name: impl Into<String>, func: impl Fn(f64) -> f64 + 'static) -> Self {
        BasisFunction {
            name: name.into(),
            func: Box::new(func),
        }
    }
}

/// Weighted sum of basis evaluations: `sum_i lambda[i] * sigma_i(x)`.
pub fn basis_forward(
    x: f64,
    lambda: &[f64],
    bases: &[BasisFunction],
) -> Result<f64, ActivationError> {
    if lambda.len() != bases.len() {
        return Err(ActivationError::BasisMismatch {
            lambda: lambda.len(),
            bases: bases.len(),
        });
    }
    let mut acc = 0.0;
    for (l, basis) in lambda.iter().zip(bases) {
        acc += l * (basis.func)(x);
    }
    Ok(acc)
}

/// The basis set under which `basis_forward` reproduces an APL activation:
/// ReLU with weight one plus one shifted hinge per unit.
pub fn apl_basis_set(act: &AplActivation) -> (Vec<f64>, Vec<BasisFunction>) {
    let mut lambda = vec![1.0];
    let mut bases = vec![BasisFunction::new("relu", |x: f64| x.max(0.0))];
    for (i, (&l, &b)) in act.lambda.iter().zip(&act.breakpoints).enumerate() {
        lambda.push(l);
        bases.push(BasisFunction::new(
            format!("hinge{i}@{b}"),
            move |x: f64| (b - x).max(0.0),
        ));
    }
    (lambda, bases)
}

/// Which activation a layer applies: a fixed ReLU shared by all languages, or
/// one trainable APL parameter set per registered language.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationSlot {
    FixedRelu,
    Adaptive { per_language: Vec<AplActivation> },
}

impl ActivationSlot {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, ActivationSlot::Adaptive { .. })
    }

    pub fn language_activation(&self, language: usize) -> Option<&AplActivation> {
        match self {
            ActivationSlot::FixedRelu => None,
            ActivationSlot::Adaptive { per_language } => per_language.get(language),
        }
    }

    #[inline]
    pub fn eval(&self, language: usize, x: f64) -> f64 {
        match self {
            ActivationSlot::FixedRelu => x.max(0.0),
            ActivationSlot::Adaptive { per_language } => per_language[language].eval(x),
        }
    }

    #[inline]
    pub fn input_derivative(&self, language: usize, x: f64) -> f64 {
        match self {
            ActivationSlot::FixedRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationSlot::Adaptive { per_language } => {
                per_language[language].input_derivative(x)
            }
        }
    }
}
