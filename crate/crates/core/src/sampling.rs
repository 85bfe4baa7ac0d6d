//! Seeded generation of populations, outcomes and training datasets.

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovariateState, Dimensions, MechanismSpec, PopulationSpec, Time};
use crate::rng::{RngSeed, SampleStream};

/// Incremental iid sampler over `mu`; successive calls continue one stream.
pub struct CovariateSampler<'a> {
    mu: &'a PopulationSpec,
    dims: Dimensions,
    stream: SampleStream,
}

impl<'a> CovariateSampler<'a> {
    pub fn new(mu: &'a PopulationSpec, dims: Dimensions, seed: RngSeed) -> Result<Self> {
        mu.validate()?;
        if mu.dim() != dims.total() {
            return Err(Error::DimensionMismatch {
                context: "population",
                expected: dims.total(),
                got: mu.dim(),
            });
        }
        Ok(CovariateSampler {
            mu,
            dims,
            stream: seed.stream(),
        })
    }

    pub fn take(&mut self, n: usize, epoch: usize) -> Vec<CovariateState> {
        (0..n)
            .map(|_| {
                let row = self.mu.draw(&mut self.stream);
                let (s, a, l) = self.dims.split(&row);
                CovariateState {
                    x_s: s.to_vec(),
                    x_a: a.to_vec(),
                    x_l: l.to_vec(),
                    epoch,
                    time: Time::Start,
                }
            })
            .collect()
    }
}

/// `n` iid start-of-epoch states from `mu`, latent block included.
pub fn sample_covariates(
    mu: &PopulationSpec,
    dims: Dimensions,
    n: usize,
    epoch: usize,
    seed: RngSeed,
) -> Result<Vec<CovariateState>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(CovariateSampler::new(mu, dims, seed)?.take(n, epoch))
}

/// Independent `Y_i ~ Bernoulli(f(x_i))` for post-intervention states.
pub fn sample_outcomes(f: &MechanismSpec, states: &[CovariateState], seed: RngSeed) -> Result<Vec<u8>> {
    if states.iter().any(|s| s.time != Time::End) {
        return Err(Error::PreInterventionState);
    }
    let mut stream = seed.stream();
    states
        .iter()
        .map(|s| {
            let p = f.eval(&s.x_s, &s.x_a, &s.x_l)?;
            Ok(u8::from(stream.bernoulli(p)))
        })
        .collect()
}

/// Observed training data `(X_s(0), X_a(0), Y)` of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub p_s: usize,
    pub p_a: usize,
    /// Row-major `n x (p_s + p_a)`.
    pub covariates: Vec<Vec<f64>>,
    pub outcomes: Vec<u8>,
    pub epoch: usize,
}

impl Dataset {
    pub fn new(p_s: usize, p_a: usize, covariates: Vec<Vec<f64>>, outcomes: Vec<u8>, epoch: usize) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if covariates.len() != outcomes.len() {
            return Err(Error::LengthMismatch {
                states: covariates.len(),
                outcomes: outcomes.len(),
            });
        }
        if let Some(bad) = covariates.iter().find(|r| r.len() != p_s + p_a) {
            return Err(Error::DimensionMismatch {
                context: "dataset row",
                expected: p_s + p_a,
                got: bad.len(),
            });
        }
        if outcomes.iter().any(|y| *y > 1) {
            return Err(Error::InvalidSpec("outcomes must be 0 or 1".into()));
        }
        Ok(Dataset {
            p_s,
            p_a,
            covariates,
            outcomes,
            epoch,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn width(&self) -> usize {
        self.p_s + self.p_a
    }

    /// Split of row `i` into `(x_s, x_a)`.
    pub fn row(&self, i: usize) -> (&[f64], &[f64]) {
        self.covariates[i].split_at(self.p_s)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.p_s,
            self.p_a,
            rows.iter().map(|&i| self.covariates[i].clone()).collect(),
            rows.iter().map(|&i| self.outcomes[i]).collect(),
            self.epoch,
        )
    }

    pub fn header(&self) -> Vec<String> {
        (1..=self.p_s)
            .map(|i| format!("s{i}"))
            .chain((1..=self.p_a).map(|i| format!("a{i}")))
            .chain(std::iter::once("y".to_string()))
            .collect()
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for (row, y) in self.covariates.iter().zip(&self.outcomes) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads the `s1.., a1.., y` layout written by [`Dataset::write_csv`].
    /// Lines starting with `#` are skipped.
    pub fn read_csv<R: io::Read>(reader: R, epoch: usize) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let header = r.headers()?.clone();
        let p_s = header.iter().filter(|h| h.starts_with('s')).count();
        let p_a = header.iter().filter(|h| h.starts_with('a')).count();
        if header.len() != p_s + p_a + 1 || header.get(header.len() - 1) != Some("y") {
            return Err(Error::Csv(format!("unexpected dataset header {header:?}")));
        }
        let mut covariates = Vec::new();
        let mut outcomes = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Csv(format!("{v}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let (x, y) = vals.split_at(p_s + p_a);
            covariates.push(x.to_vec());
            outcomes.push(y[0] as u8);
        }
        Dataset::new(p_s, p_a, covariates, outcomes, epoch)
    }
}

/// Drops the latent block: the dataset holds `(X_s(0), X_a(0))` and `Y`.
pub fn make_dataset(states: &[CovariateState], outcomes: &[u8]) -> Result<Dataset> {
    let Some(first) = states.first() else {
        return Err(Error::EmptyDataset);
    };
    if states.len() != outcomes.len() {
        return Err(Error::LengthMismatch {
            states: states.len(),
            outcomes: outcomes.len(),
        });
    }
    let (p_s, p_a, _) = first.dims();
    let covariates = states
        .iter()
        .map(|s| s.x_s.iter().chain(&s.x_a).copied().collect())
        .collect();
    Dataset::new(p_s, p_a, covariates, outcomes.to_vec(), first.epoch)
}
