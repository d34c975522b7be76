//! Ready-made parametric systems used by tests, benchmarks, and the
//! command-line examples.

use crate::model::{AffineParametricSystem, ParamBounds, Polynomial, QuantityOfInterest};
use nalgebra::{DMatrix, DVector};

/// 1D diffusion bar on [0, 1] with three material regions of equal width.
/// Piecewise-linear finite elements, a clamped left end, a free right end,
/// and a unit volumetric source. Parameters are the three region
/// conductivities on [1, 2], so `A(mu) = sum_r mu_r A_r` is SPD on the
/// whole box and the state varies like `1/mu` per region.
pub fn diffusion_bar(n_cells: usize) -> AffineParametricSystem {
    assert!(n_cells >= 3, "need at least one cell per region");
    let n_mu = 3;
    let bounds = ParamBounds::from_slices(&[1.0; 3], &[2.0; 3]).unwrap();
    let h = 1.0 / n_cells as f64;
    // Unknowns are nodes 1..=n_cells; node 0 carries the Dirichlet condition.
    let n_w = n_cells;
    let mut region_stiffness = vec![DMatrix::zeros(n_w, n_w); n_mu];
    let mut load = DVector::zeros(n_w);
    for e in 0..n_cells {
        let region = (((e as f64 + 0.5) * h) * n_mu as f64).floor() as usize;
        let region = region.min(n_mu - 1);
        let k = &mut region_stiffness[region];
        let (i, j) = (e as isize - 1, e as isize); // global unknown indices
        let w = 1.0 / h;
        if i >= 0 {
            let i = i as usize;
            k[(i, i)] += w;
            k[(i, j as usize)] -= w;
            k[(j as usize, i)] -= w;
        }
        k[(j as usize, j as usize)] += w;
        if i >= 0 {
            load[i as usize] += 0.5 * h;
        }
        load[j as usize] += 0.5 * h;
    }
    let terms = region_stiffness
        .into_iter()
        .enumerate()
        .map(|(r, k)| (Polynomial::linear(n_mu, r, 1.0), k))
        .collect();
    AffineParametricSystem::new(bounds, DMatrix::zeros(n_w, n_w), terms, load, vec![])
        .expect("diffusion bar assembly is well-formed")
}

/// Load work `q = b^T w` for a system whose right-hand side does not depend
/// on the parameters; for the bar this is the integrated temperature.
pub fn compliance_qoi(sys: &AffineParametricSystem) -> QuantityOfInterest {
    assert!(
        sys.rhs_terms().is_empty(),
        "compliance as b^T w needs a parameter-independent load"
    );
    let b = sys.base_rhs().clone();
    let b_grad = b.clone();
    QuantityOfInterest::new(
        "compliance",
        move |w, _| b.dot(w),
        move |_, _| b_grad.clone(),
        |_, mu| DVector::zeros(mu.len()),
    )
}

/// Resource constraint `sum(mu) - limit <= 0` on the raw parameters.
pub fn budget_qoi(limit: f64) -> QuantityOfInterest {
    QuantityOfInterest::new(
        "budget",
        move |_, mu| mu.sum() - limit,
        |w, _| DVector::zeros(w.len()),
        |_, mu| DVector::from_element(mu.len(), 1.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn stiffness_is_spd_across_the_parameter_box() {
        let sys = diffusion_bar(12);
        for mu in [[1.0, 1.0, 1.0], [2.0, 1.0, 1.5], [1.3, 1.7, 1.1]] {
            let (a, _) = sys.assemble(&DVector::from_row_slice(&mu)).unwrap();
            assert!(linalg::is_spd(&a), "stiffness must be SPD at {mu:?}");
        }
    }

    #[test]
    fn uniform_conductivity_matches_the_analytic_tip_value() {
        // With mu = (c, c, c), -c u'' = 1, u(0) = 0, u'(1) = 0: the exact
        // solution u(x) = (x - x^2/2)/c is quadratic, and linear elements
        // are nodally exact for this load.
        let sys = diffusion_bar(30);
        let c = 2.0;
        let w = sys.solve_full(&DVector::from_row_slice(&[c, c, c])).unwrap().w;
        let tip = w[w.len() - 1];
        assert!((tip - 0.5 / c).abs() < 1e-10, "tip value {tip} vs {}", 0.5 / c);
    }
}
