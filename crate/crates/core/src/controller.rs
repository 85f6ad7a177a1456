use serde::Serialize;

use crate::backstepping::BacksteppingController;
use crate::error::{invalid, Result};
use crate::modal_sim::{Lift, LinearFunctional};
use crate::quadrature::CubicSpline;
use crate::reduced_design::{feedback_kernel, ReducedController};
use crate::sl_operator::EigenSystem;

/// Boundary feedback applied at the sampling instants.
#[derive(Clone, Debug)]
pub enum ControllerSpec {
    None,
    Reduced(ReducedController),
    Backstepping(Box<BacksteppingController>),
}

/// Feedback functional plus, when available, the functionals
/// `x -> integral k x` and `x -> integral g x` used for v and w.
#[derive(Clone, Debug, Serialize)]
pub struct ControllerFunctionals {
    pub feedback: LinearFunctional,
    pub diagnostics: Option<(LinearFunctional, LinearFunctional)>,
}

impl ControllerSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ControllerSpec::None => "none",
            ControllerSpec::Reduced(_) => "reduced",
            ControllerSpec::Backstepping(_) => "backstepping",
        }
    }

    pub fn functionals(&self, eigsys: &EigenSystem, lift: Option<&Lift>) -> Result<ControllerFunctionals> {
        match self {
            ControllerSpec::None => Ok(ControllerFunctionals {
                feedback: LinearFunctional { modal: vec![0.0; eigsys.len()], tail: 0.0 },
                diagnostics: None,
            }),
            ControllerSpec::Reduced(c) => {
                if c.m > eigsys.len() {
                    return Err(invalid(format!(
                        "controller acts on {} modes, simulation keeps {}",
                        c.m,
                        eigsys.len()
                    )));
                }
                let mut modal = vec![0.0; eigsys.len()];
                modal[..c.m].copy_from_slice(&c.k);
                // The kernel lies in the span of the retained modes, so it is
                // r-orthogonal to the quasi-static tail.
                let f = LinearFunctional { modal, tail: 0.0 };
                Ok(ControllerFunctionals { feedback: f.clone(), diagnostics: Some((f.clone(), f)) })
            }
            ControllerSpec::Backstepping(c) => {
                let (k, g) = c.functionals(eigsys, lift)?;
                Ok(ControllerFunctionals { feedback: k.clone(), diagnostics: Some((k, g)) })
            }
        }
    }

    /// Weight `f` with `u = integral f x dz`, sampled at arbitrary points, for
    /// solvers that do not work in modal coordinates.
    pub fn physical_kernel(&self, eigsys: &EigenSystem, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            ControllerSpec::None => Ok(vec![0.0; z.len()]),
            ControllerSpec::Reduced(c) => {
                let r = &eigsys.problem().r;
                if eigsys.closed_form().is_some() {
                    Ok(z.iter()
                        .map(|&s| {
                            let sum: f64 = c.k.iter().enumerate().map(|(i, k)| k * eigsys.phi_at(i, s).unwrap()).sum();
                            r.eval(s) * sum
                        })
                        .collect())
                } else {
                    let spline = CubicSpline::new(eigsys.grid().points().to_vec(), feedback_kernel(&c.k, eigsys))?;
                    Ok(z.iter().map(|&s| spline.eval(s)).collect())
                }
            }
            ControllerSpec::Backstepping(c) => Ok(z.iter().map(|&s| c.gain(s)).collect()),
        }
    }

    pub fn has_transform(&self) -> bool {
        matches!(self, ControllerSpec::Backstepping(_))
    }

    /// L2 norm of the Volterra-transformed profile for backstepping.
    pub fn transformed_norm(&self, eigsys: &EigenSystem, profile: &[f64]) -> Option<f64> {
        match self {
            ControllerSpec::Backstepping(c) => c.transformed_norm(eigsys, profile),
            _ => None,
        }
    }
}
