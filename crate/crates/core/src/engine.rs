//! Masked multiplicative updates for coupled non-negative factorisations.
//!
//! For factor `Z_a` the update is
//!
//! ```text
//! Z_a <- Z_a * sum_nu R[nu][a] D_{a,nu}(M_nu * Xhat_nu^{-p} * X_nu)
//!            / sum_nu R[nu][a] D_{a,nu}(M_nu * Xhat_nu^{1-p})
//! ```
//!
//! where `D_{a,nu}(arg)` multiplies `arg` with every factor of observation
//! `nu` except `Z_a` and sums out every index `Z_a` does not carry. `p`
//! selects the cost: 0 is squared Euclidean, 1 Kullback-Leibler and 2
//! Itakura-Saito. Factors are updated one at a time in declaration order and
//! every prediction is recomputed from the current factors before each update.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GctfError, Result};
use crate::model::ModelSpec;
use crate::tensor::{product_then_marginalize, DenseTensor, Mask, DEFAULT_EPSILON};

/// Cost function selector; the discriminant is the exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cost {
    Euc = 0,
    Kl = 1,
    Is = 2,
}

impl Cost {
    pub fn p(self) -> u8 {
        self as u8
    }

    pub fn from_p(p: u8) -> Result<Cost> {
        match p {
            0 => Ok(Cost::Euc),
            1 => Ok(Cost::Kl),
            2 => Ok(Cost::Is),
            other => Err(GctfError::InvalidValue(format!(
                "cost exponent must be 0, 1 or 2, got {other}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cost::Euc => "euc",
            Cost::Kl => "kl",
            Cost::Is => "is",
        }
    }

    /// Whether multiplicative updates are known to never increase this cost.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Cost::Is)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cost {
    type Err = GctfError;

    fn from_str(s: &str) -> Result<Cost> {
        match s.to_ascii_lowercase().as_str() {
            "euc" | "0" => Ok(Cost::Euc),
            "kl" | "1" => Ok(Cost::Kl),
            "is" | "2" => Ok(Cost::Is),
            other => Err(GctfError::InvalidValue(format!(
                "unknown cost `{other}` (expected euc, kl or is)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateConfig {
    pub cost: Cost,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            cost: Cost::Kl,
            max_iters: 500,
            rel_tol: 1e-6,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(GctfError::InvalidValue(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return Err(GctfError::InvalidValue(format!(
                "rel_tol must be a non-negative number, got {}",
                self.rel_tol
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(GctfError::InvalidValue(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(GctfError::InvalidValue(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Current values of every latent factor, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    names: Vec<String>,
    tensors: Vec<DenseTensor>,
}

impl FactorSet {
    /// Wraps explicit factor values; they must match the declarations of `spec`.
    pub fn new(spec: &ModelSpec, tensors: Vec<DenseTensor>) -> Result<Self> {
        if tensors.len() != spec.factors.len() {
            return Err(GctfError::Shape(format!(
                "{} factor tensors for {} declared factors",
                tensors.len(),
                spec.factors.len()
            )));
        }
        for (decl, t) in spec.factors.iter().zip(&tensors) {
            if t.indices() != decl.indices.as_slice() {
                return Err(GctfError::Shape(format!(
                    "factor `{}` declared over {:?}, got {:?}",
                    decl.name,
                    decl.labels(),
                    t.labels()
                )));
            }
        }
        Ok(FactorSet {
            names: spec.factors.iter().map(|f| f.name.clone()).collect(),
            tensors,
        })
    }

    /// Draws every entry i.i.d. from `(0, scale]`, factor by factor in declaration order.
    pub fn random(spec: &ModelSpec, seed: u64, scale: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = spec
            .factors
            .iter()
            .map(|f| {
                let n: usize = f.indices.iter().map(|i| i.cardinality).product();
                let values = (0..n)
                    .map(|_| scale * (1.0 - rng.random::<f64>()))
                    .collect();
                DenseTensor::new(f.indices.clone(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        FactorSet::new(spec, tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|p| &self.tensors[p])
    }

    pub fn by_id(&self, alpha: usize) -> &DenseTensor {
        &self.tensors[alpha]
    }

    pub fn name(&self, alpha: usize) -> &str {
        &self.names[alpha]
    }

    /// Replaces factor `alpha`; the layout must stay the same.
    pub fn set(&mut self, alpha: usize, value: DenseTensor) -> Result<()> {
        if value.indices() != self.tensors[alpha].indices() {
            return Err(GctfError::Shape(format!(
                "replacement for `{}` has layout {:?}",
                self.names[alpha],
                value.labels()
            )));
        }
        self.tensors[alpha] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub factors: FactorSet,
    /// Total masked divergence after each sweep.
    pub objective_trace: Vec<f64>,
    /// Total masked divergence at the initial factors.
    pub initial_objective: f64,
    pub iterations_run: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace
            .last()
            .copied()
            .unwrap_or(self.initial_objective)
    }
}

fn check_factor_layout(spec: &ModelSpec, factors: &FactorSet) -> Result<()> {
    if factors.len() != spec.factors.len() {
        return Err(GctfError::Shape(format!(
            "{} factors supplied for {} declared",
            factors.len(),
            spec.factors.len()
        )));
    }
    for (a, decl) in spec.factors.iter().enumerate() {
        if factors.by_id(a).indices() != decl.indices.as_slice() {
            return Err(GctfError::Shape(format!(
                "factor `{}` does not match its declaration",
                decl.name
            )));
        }
    }
    Ok(())
}

fn observation(spec: &ModelSpec, nu: usize) -> Result<&crate::model::ObservationDecl> {
    spec.observations.get(nu).ok_or_else(|| GctfError::Lookup {
        kind: "observation",
        name: format!("#{nu}"),
    })
}

/// Model prediction for observation `nu`: the product of its coupled factors
/// summed over every index it does not carry.
pub fn predict(spec: &ModelSpec, factors: &FactorSet, nu: usize) -> Result<DenseTensor> {
    let obs = observation(spec, nu)?;
    check_factor_layout(spec, factors)?;
    let coupled: Vec<&DenseTensor> = spec
        .coupled_factors(nu)
        .into_iter()
        .map(|a| factors.by_id(a))
        .collect();
    let keep: Vec<&str> = obs.data.labels();
    product_then_marginalize(&coupled, &keep)
}

/// Multiplies `arg` (shaped like observation `nu`) with every factor of `nu`
/// other than `alpha` and sums down to `alpha`'s index set.
pub fn delta(
    spec: &ModelSpec,
    factors: &FactorSet,
    alpha: usize,
    nu: usize,
    arg: &DenseTensor,
) -> Result<DenseTensor> {
    let obs = observation(spec, nu)?;
    let decl = spec.factors.get(alpha).ok_or_else(|| GctfError::Lookup {
        kind: "factor",
        name: format!("#{alpha}"),
    })?;
    if !spec.coupling.is_coupled(nu, alpha) {
        return Err(GctfError::InvalidValue(format!(
            "factor `{}` is not coupled to observation `{}`",
            decl.name, obs.name
        )));
    }
    if arg.indices() != obs.visible() {
        return Err(GctfError::Shape(format!(
            "argument over {:?} does not match observation `{}` over {:?}",
            arg.labels(),
            obs.name,
            obs.data.labels()
        )));
    }
    let mut operands: Vec<&DenseTensor> = vec![arg];
    operands.extend(
        spec.coupled_factors(nu)
            .into_iter()
            .filter(|&a| a != alpha)
            .map(|a| factors.by_id(a)),
    );
    // Indices private to `alpha` are carried by nothing else; broadcast over them.
    let private = decl
        .labels()
        .into_iter()
        .any(|l| operands.iter().all(|t| t.axis_of(l).is_none()));
    let ones;
    if private {
        ones = DenseTensor::filled(decl.indices.clone(), 1.0)?;
        operands.push(&ones);
    }
    product_then_marginalize(&operands, &decl.labels())
}

/// Numerator and denominator arguments of the update for one observation.
fn update_arguments(
    data: &DenseTensor,
    mask: &Mask,
    prediction: &DenseTensor,
    cost: Cost,
    eps: f64,
) -> (DenseTensor, DenseTensor) {
    let n = data.len();
    let mut num = Vec::with_capacity(n);
    let mut den = Vec::with_capacity(n);
    for (off, (&x, &xh)) in data.values().iter().zip(prediction.values()).enumerate() {
        if !mask.is_observed(off) {
            num.push(0.0);
            den.push(0.0);
            continue;
        }
        match cost {
            Cost::Euc => {
                num.push(x);
                den.push(xh);
            }
            Cost::Kl => {
                num.push(x / xh.max(eps));
                den.push(1.0);
            }
            Cost::Is => {
                let g = xh.max(eps);
                num.push(x / (g * g));
                den.push(1.0 / g);
            }
        }
    }
    let ix = data.indices().to_vec();
    (
        DenseTensor::from_parts(ix.clone(), num),
        DenseTensor::from_parts(ix, den),
    )
}

/// One multiplicative update of factor `alpha` against the current values of
/// all other factors. Entries whose numerator and denominator both vanish
/// (no observed data reaches them) keep their value.
pub fn update_factor(
    spec: &ModelSpec,
    factors: &FactorSet,
    alpha: usize,
    config: &UpdateConfig,
) -> Result<DenseTensor> {
    update_factor_at(spec, factors, alpha, config, 0)
}

fn update_factor_at(
    spec: &ModelSpec,
    factors: &FactorSet,
    alpha: usize,
    config: &UpdateConfig,
    iteration: usize,
) -> Result<DenseTensor> {
    let eps = config.epsilon;
    let current = factors.by_id(alpha);
    let numerical = |detail: String| GctfError::Numerical {
        iteration,
        factor: factors.name(alpha).to_string(),
        detail,
    };

    let mut num = vec![0.0; current.len()];
    let mut den = vec![0.0; current.len()];
    for nu in spec.coupled_observations(alpha) {
        let obs = &spec.observations[nu];
        let prediction = predict(spec, factors, nu)?;
        let (num_arg, den_arg) =
            update_arguments(&obs.data, &obs.mask, &prediction, config.cost, eps);
        let dn = delta(spec, factors, alpha, nu, &num_arg)?;
        let dd = delta(spec, factors, alpha, nu, &den_arg)?;
        for (acc, v) in num.iter_mut().zip(dn.values()) {
            *acc += v;
        }
        for (acc, v) in den.iter_mut().zip(dd.values()) {
            *acc += v;
        }
    }

    let mut out = Vec::with_capacity(current.len());
    for ((&z, &n), &d) in current.values().iter().zip(&num).zip(&den) {
        if !(n.is_finite() && d.is_finite()) {
            return Err(numerical(format!(
                "non-finite update terms (numerator {n}, denominator {d})"
            )));
        }
        let updated = if n == 0.0 && d == 0.0 {
            z
        } else {
            z * (n / d.max(eps))
        };
        if !updated.is_finite() {
            return Err(numerical(format!("update overflowed ({z} * {n} / {d})")));
        }
        out.push(updated);
    }
    Ok(DenseTensor::from_parts(current.indices().to_vec(), out))
}

/// Masked divergence between data and prediction, summed over observed entries.
///
/// * EUC: `1/2 (x - xh)^2`
/// * KL:  `x log(x / xh) - x + xh`, with `0 log 0 = 0`
/// * IS:  `x / xh - log(x / xh) - 1`
///
/// Logarithm arguments and denominators are clamped below at `eps`.
pub fn divergence(
    x: &DenseTensor,
    prediction: &DenseTensor,
    mask: &Mask,
    cost: Cost,
    eps: f64,
) -> Result<f64> {
    if !x.same_layout(prediction) || x.indices() != mask.indices() {
        return Err(GctfError::Shape(format!(
            "divergence operands disagree: {:?}, {:?}, {:?}",
            x.labels(),
            prediction.labels(),
            mask.tensor().labels()
        )));
    }
    let mut total = 0.0;
    for (off, (&v, &vh)) in x.values().iter().zip(prediction.values()).enumerate() {
        if !mask.is_observed(off) {
            continue;
        }
        total += match cost {
            Cost::Euc => 0.5 * (v - vh) * (v - vh),
            Cost::Kl => {
                let log_term = if v > 0.0 {
                    v * (v / vh.max(eps)).ln()
                } else {
                    0.0
                };
                log_term - v + vh
            }
            Cost::Is => {
                let g = vh.max(eps);
                v / g - (v.max(eps) / g).ln() - 1.0
            }
        };
    }
    Ok(total)
}

/// Unweighted sum over observations of the masked divergence.
pub fn objective(spec: &ModelSpec, factors: &FactorSet, cost: Cost, eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for (nu, obs) in spec.observations.iter().enumerate() {
        let prediction = predict(spec, factors, nu)?;
        total += divergence(&obs.data, &prediction, &obs.mask, cost, eps)?;
    }
    Ok(total)
}

/// Fits from a seeded random initialisation.
pub fn fit(spec: &ModelSpec, config: &UpdateConfig) -> Result<FitResult> {
    spec.ensure_valid()?;
    config.validate()?;
    let init = FactorSet::random(spec, config.seed, config.init_scale)?;
    fit_from(spec, init, config)
}

/// Fits starting from the given factors.
pub fn fit_from(
    spec: &ModelSpec,
    mut factors: FactorSet,
    config: &UpdateConfig,
) -> Result<FitResult> {
    spec.ensure_valid()?;
    config.validate()?;
    check_factor_layout(spec, &factors)?;
    let eps = config.epsilon;

    let initial_objective = objective(spec, &factors, config.cost, eps)?;
    let mut trace = Vec::new();
    let mut previous = initial_objective;
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        for alpha in 0..factors.len() {
            let updated = update_factor_at(spec, &factors, alpha, config, iteration)?;
            factors.set(alpha, updated)?;
        }
        let f = objective(spec, &factors, config.cost, eps)?;
        if !f.is_finite() {
            return Err(GctfError::Numerical {
                iteration,
                factor: "<objective>".into(),
                detail: format!("objective evaluated to {f}"),
            });
        }
        trace.push(f);
        if (previous - f).abs() / previous.max(eps) < config.rel_tol {
            converged = true;
            break;
        }
        previous = f;
    }
    Ok(FitResult {
        factors,
        iterations_run: trace.len(),
        objective_trace: trace,
        initial_objective,
        converged,
    })
}
