//! Multivariate polynomial coefficient functions with analytic gradients.

use super::ModelError;

/// Highest total degree accepted for a coefficient polynomial.
pub const MAX_DEGREE: u32 = 3;

/// One term `coef * prod_i mu_i^{exponents[i]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub exponents: Vec<u32>,
}

/// Polynomial in the parameter vector, total degree at most [`MAX_DEGREE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    n_mu: usize,
    monomials: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(n_mu: usize, monomials: Vec<Monomial>) -> Result<Self, ModelError> {
        for m in &monomials {
            if m.exponents.len() != n_mu {
                return Err(ModelError::ParameterCountMismatch {
                    expected: n_mu,
                    got: m.exponents.len(),
                });
            }
            let degree: u32 = m.exponents.iter().sum();
            if degree > MAX_DEGREE {
                return Err(ModelError::DegreeTooHigh { degree, max: MAX_DEGREE });
            }
        }
        Ok(Self { n_mu, monomials })
    }

    pub fn constant(n_mu: usize, c: f64) -> Self {
        Self { n_mu, monomials: vec![Monomial { coef: c, exponents: vec![0; n_mu] }] }
    }

    /// The coordinate polynomial `c * mu_axis`.
    pub fn linear(n_mu: usize, axis: usize, c: f64) -> Self {
        let mut exponents = vec![0; n_mu];
        exponents[axis] = 1;
        Self { n_mu, monomials: vec![Monomial { coef: c, exponents }] }
    }

    pub fn n_mu(&self) -> usize {
        self.n_mu
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn degree(&self) -> u32 {
        self.monomials
            .iter()
            .map(|m| m.exponents.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// True when the polynomial has no dependence on the parameters.
    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    pub fn constant_value(&self) -> f64 {
        debug_assert!(self.is_constant());
        self.monomials.iter().map(|m| m.coef).sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            n_mu: self.n_mu,
            monomials: self
                .monomials
                .iter()
                .map(|m| Monomial { coef: m.coef * factor, exponents: m.exponents.clone() })
                .collect(),
        }
    }

    pub fn eval(&self, mu: &[f64]) -> f64 {
        debug_assert_eq!(mu.len(), self.n_mu);
        self.monomials
            .iter()
            .map(|m| {
                m.coef
                    * m.exponents
                        .iter()
                        .zip(mu)
                        .map(|(&e, &x)| x.powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Analytic gradient; each monomial contributes
    /// `coef * e_i * mu_i^{e_i - 1} * prod_{j != i} mu_j^{e_j}` on axis `i`.
    pub fn gradient(&self, mu: &[f64]) -> Vec<f64> {
        debug_assert_eq!(mu.len(), self.n_mu);
        let mut g = vec![0.0; self.n_mu];
        for m in &self.monomials {
            for i in 0..self.n_mu {
                let e = m.exponents[i];
                if e == 0 {
                    continue;
                }
                let mut term = m.coef * e as f64 * mu[i].powi(e as i32 - 1);
                for (j, (&ej, &xj)) in m.exponents.iter().zip(mu).enumerate() {
                    if j != i {
                        term *= xj.powi(ej as i32);
                    }
                }
                g[i] += term;
            }
        }
        g
    }
}
