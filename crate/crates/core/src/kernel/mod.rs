//! Matérn covariance and kernel-matrix assembly.

mod bessel;

pub use bessel::{bessel_k, BesselOrder};

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::data::{sq_dist, Points};
use crate::error::{GpError, Result};

/// Matérn hyperparameters: variance scale, smoothness, length scale and nugget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    sigma2: f64,
    nu: f64,
    ell: f64,
    tau2: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, nu: f64, ell: f64, tau2: f64) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(GpError::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("sigma2", sigma2)?;
        positive("nu", nu)?;
        positive("ell", ell)?;
        if !(tau2.is_finite() && tau2 >= 0.0) {
            return Err(GpError::invalid(format!(
                "tau2 must be non-negative and finite, got {tau2}"
            )));
        }
        Ok(MaternParams {
            sigma2,
            nu,
            ell,
            tau2,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn with_sigma2(self, sigma2: f64) -> Result<Self> {
        MaternParams::new(sigma2, self.nu, self.ell, self.tau2)
    }

    pub fn with_nu(self, nu: f64) -> Result<Self> {
        MaternParams::new(self.sigma2, nu, self.ell, self.tau2)
    }

    /// Same parameters with the variance scale set to one.
    pub fn unit_scale(self) -> Self {
        MaternParams {
            sigma2: 1.0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Form {
    Exponential,
    ThreeHalves,
    FiveHalves,
    General {
        order: BesselOrder,
        /// `2^(1-nu) / Gamma(nu)`
        prefactor: f64,
    },
}

/// A Matérn covariance function with order-dependent constants precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Matern {
    params: MaternParams,
    /// `sqrt(2 nu) / ell`
    scale: f64,
    form: Form,
}

impl Matern {
    /// Uses the closed form when `nu` is 1/2, 3/2 or 5/2.
    pub fn new(params: MaternParams) -> Self {
        let form = match params.nu {
            0.5 => Form::Exponential,
            1.5 => Form::ThreeHalves,
            2.5 => Form::FiveHalves,
            _ => return Matern::general(params),
        };
        Matern {
            params,
            scale: (2.0 * params.nu).sqrt() / params.ell,
            form,
        }
    }

    /// Always evaluates through the Bessel function, whatever the order.
    pub fn general(params: MaternParams) -> Self {
        let nu = params.nu;
        let prefactor = ((1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu)).exp();
        Matern {
            params,
            scale: (2.0 * nu).sqrt() / params.ell,
            form: Form::General {
                order: BesselOrder::new(nu),
                prefactor,
            },
        }
    }

    pub fn params(&self) -> &MaternParams {
        &self.params
    }

    /// Covariance at distance `h >= 0`, without the nugget.
    #[inline]
    pub fn value(&self, h: f64) -> f64 {
        let sigma2 = self.params.sigma2;
        if h == 0.0 {
            return sigma2;
        }
        let z = self.scale * h;
        let v = match self.form {
            Form::Exponential => (-z).exp(),
            Form::ThreeHalves => (1.0 + z) * (-z).exp(),
            Form::FiveHalves => (1.0 + z + z * z / 3.0) * (-z).exp(),
            Form::General { order, prefactor } => {
                let k = order.eval(z);
                let v = prefactor * z.powf(self.params.nu) * k;
                // Overflow of K at vanishing z: fall back to the zero-distance limit.
                if v.is_finite() {
                    v.min(1.0)
                } else {
                    1.0
                }
            }
        };
        sigma2 * v
    }
}

/// Matérn covariance at distance `h`; exactly `sigma2` at zero, no nugget.
pub fn matern_value(h: f64, params: &MaternParams) -> Result<f64> {
    if !h.is_finite() || h < 0.0 {
        return Err(GpError::invalid(format!(
            "distance must be finite and non-negative, got {h}"
        )));
    }
    Ok(Matern::new(*params).value(h))
}

/// Pairwise Euclidean distances between the rows of two point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }
    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

fn check_dims(a: &Points, b: &Points) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(GpError::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub fn pairwise_distances(a: &Points, b: &Points) -> Result<DistanceMatrix> {
    check_dims(a, b)?;
    let entries = DMatrix::from_fn(a.len(), b.len(), |i, j| sq_dist(a.row(i), b.row(j)).sqrt());
    Ok(DistanceMatrix { entries })
}

/// Cross-covariance `K(A, B)`; no nugget is ever added here.
pub fn cross_covariance(a: &Points, b: &Points, params: &MaternParams) -> Result<DMatrix<f64>> {
    let kernel = Matern::new(*params);
    Ok(pairwise_distances(a, b)?.entries.map(|h| kernel.value(h)))
}

/// Self-covariance `K(A, A)`, with `tau2` on the diagonal when `add_nugget` is set.
pub fn self_covariance(a: &Points, params: &MaternParams, add_nugget: bool) -> DMatrix<f64> {
    let kernel = Matern::new(*params);
    let n = a.len();
    let nugget = if add_nugget { params.tau2 } else { 0.0 };
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.sigma2 + nugget;
        for j in 0..i {
            let v = kernel.value(sq_dist(a.row(i), a.row(j)).sqrt());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
