use crate::error::{Error, Result};
use crate::rng::SampleStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub prob: f64,
}

/// Population measure `mu` over full covariate rows `(x_s, x_a, x_l)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PopulationSpec {
    GaussianDiagonal { mean: Vec<f64>, var: Vec<f64> },
    DiscreteAtoms(Vec<Atom>),
}

impl PopulationSpec {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != var.len() {
            return Err(Error::InvalidSpec(format!(
                "gaussian mean has {} entries but variance has {}",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidSpec("gaussian parameters must be finite, variances >= 0".into()));
        }
        Ok(PopulationSpec::GaussianDiagonal { mean, var })
    }

    /// Independent standard normals in `dim` coordinates.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn atoms(atoms: Vec<Atom>) -> Result<Self> {
        let spec = PopulationSpec::DiscreteAtoms(atoms);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PopulationSpec::GaussianDiagonal { mean, var } => {
                Self::gaussian(mean.clone(), var.clone()).map(|_| ())
            }
            PopulationSpec::DiscreteAtoms(atoms) => {
                let Some(first) = atoms.first() else {
                    return Err(Error::InvalidSpec("discrete population needs at least one atom".into()));
                };
                let dim = first.point.len();
                if atoms.iter().any(|a| a.point.len() != dim) {
                    return Err(Error::InvalidSpec("atoms have differing dimensions".into()));
                }
                if atoms.iter().any(|a| !(a.prob > 0.0)) {
                    return Err(Error::InvalidSpec("atom probabilities must be positive".into()));
                }
                let total: f64 = atoms.iter().map(|a| a.prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "atom probabilities sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PopulationSpec::GaussianDiagonal { mean, .. } => mean.len(),
            PopulationSpec::DiscreteAtoms(atoms) => atoms.first().map_or(0, |a| a.point.len()),
        }
    }

    pub fn support(&self) -> Option<&[Atom]> {
        match self {
            PopulationSpec::DiscreteAtoms(atoms) => Some(atoms),
            _ => None,
        }
    }

    /// One iid draw.
    pub fn draw(&self, stream: &mut SampleStream) -> Vec<f64> {
        match self {
            PopulationSpec::GaussianDiagonal { mean, var } => mean
                .iter()
                .zip(var)
                .map(|(m, v)| m + v.sqrt() * stream.normal())
                .collect(),
            PopulationSpec::DiscreteAtoms(atoms) => {
                let u = stream.uniform();
                let mut acc = 0.0;
                for atom in atoms {
                    acc += atom.prob;
                    if u < acc {
                        return atom.point.clone();
                    }
                }
                atoms[atoms.len() - 1].point.clone()
            }
        }
    }

    /// Marginal over coordinates `range` (used to carve out the latent block
    /// of a population with independent blocks).
    pub fn marginal(&self, range: std::ops::Range<usize>) -> Result<Self> {
        match self {
            PopulationSpec::GaussianDiagonal { mean, var } => {
                Self::gaussian(mean[range.clone()].to_vec(), var[range].to_vec())
            }
            PopulationSpec::DiscreteAtoms(atoms) => {
                let mut merged: Vec<Atom> = Vec::new();
                for a in atoms {
                    let p = a.point[range.clone()].to_vec();
                    match merged.iter_mut().find(|m| m.point == p) {
                        Some(m) => m.prob += a.prob,
                        None => merged.push(Atom { point: p, prob: a.prob }),
                    }
                }
                Ok(PopulationSpec::DiscreteAtoms(merged))
            }
        }
    }
}
