//! State and action values shared by environments, policies and losses.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Tabular states are indices; continuous states are fixed-length vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Box of the given dimension; bounds are enforced by the environment.
    Continuous(usize),
}

impl ActionSpace {
    /// Width of the action encoding fed to a discriminator.
    pub fn feature_dim(self) -> usize {
        match self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }

    pub fn check(self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if *a < n => Ok(()),
            (ActionSpace::Discrete(n), Action::Discrete(a)) => Err(Error::Input(format!(
                "action index {a} out of range for {n} actions"
            ))),
            (ActionSpace::Continuous(d), Action::Continuous(v)) => {
                if v.len() != d {
                    Err(Error::Input(format!(
                        "action has {} components, expected {d}",
                        v.len()
                    )))
                } else if v.iter().any(|x| !x.is_finite()) {
                    Err(Error::Input("non-finite action component".into()))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::Input("action kind does not match action space".into())),
        }
    }
}

/// Actions for a batch of states, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionBatch {
    Discrete(Vec<usize>),
    /// One row per sample.
    Continuous(Array2<f64>),
}

impl ActionBatch {
    pub fn len(&self) -> usize {
        match self {
            ActionBatch::Discrete(v) => v.len(),
            ActionBatch::Continuous(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_actions(actions: &[Action], space: ActionSpace) -> Result<Self> {
        match space {
            ActionSpace::Discrete(_) => actions
                .iter()
                .map(|a| match a {
                    Action::Discrete(i) => Ok(*i),
                    Action::Continuous(_) => {
                        Err(Error::Input("continuous action in discrete batch".into()))
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(ActionBatch::Discrete),
            ActionSpace::Continuous(d) => {
                let mut m = Array2::zeros((actions.len(), d));
                for (i, a) in actions.iter().enumerate() {
                    match a {
                        Action::Continuous(v) if v.len() == d => {
                            m.row_mut(i).iter_mut().zip(v).for_each(|(x, y)| *x = *y)
                        }
                        _ => return Err(Error::Input("malformed continuous action".into())),
                    }
                }
                Ok(ActionBatch::Continuous(m))
            }
        }
    }

    pub fn get(&self, i: usize) -> Action {
        match self {
            ActionBatch::Discrete(v) => Action::Discrete(v[i]),
            ActionBatch::Continuous(m) => Action::Continuous(m.row(i).to_vec()),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            ActionBatch::Discrete(v) => ActionBatch::Discrete(idx.iter().map(|&i| v[i]).collect()),
            ActionBatch::Continuous(m) => ActionBatch::Continuous(m.select(ndarray::Axis(0), idx)),
        }
    }

    /// One-hot rows for discrete actions, raw rows for continuous ones.
    pub fn features(&self, space: ActionSpace) -> Array2<f64> {
        match self {
            ActionBatch::Discrete(v) => one_hot(v, space.feature_dim()),
            ActionBatch::Continuous(m) => m.clone(),
        }
    }
}

pub fn one_hot(indices: &[usize], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((indices.len(), width));
    for (row, &i) in indices.iter().enumerate() {
        m[[row, i]] = 1.0;
    }
    m
}
