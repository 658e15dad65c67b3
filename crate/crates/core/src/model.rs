//! Measurements, labeled training populations and test populations.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Binary class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Negative = 0,
    Positive = 1,
}

impl Class {
    pub fn from_index(v: u8) -> Option<Class> {
        match v {
            0 => Some(Class::Negative),
            1 => Some(Class::Positive),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

/// A point in measurement space with all coordinates finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement<T> {
    coords: Vec<T>,
}

impl<T: Scalar> Measurement<T> {
    pub fn new(coords: Vec<T>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument(
                "measurement needs at least one coordinate".into(),
            ));
        }
        if let Some((index, v)) = coords.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                index,
                value: v.as_f64(),
            });
        }
        Ok(Measurement { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }
}

impl<T> std::ops::Index<usize> for Measurement<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.coords[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<T> {
    pub r: Measurement<T>,
    pub label: Class,
}

/// Pure training data: separate negative and positive sample lists.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPopulation<T> {
    negatives: Vec<Measurement<T>>,
    positives: Vec<Measurement<T>>,
    dim: usize,
}

fn common_dim<'a, T: Scalar + 'a>(
    points: impl IntoIterator<Item = &'a Measurement<T>>,
) -> Result<Option<usize>> {
    let mut dim = None;
    for p in points {
        match dim {
            None => dim = Some(p.dim()),
            Some(d) => check_dim(d, p.dim())?,
        }
    }
    Ok(dim)
}

impl<T: Scalar> TrainingPopulation<T> {
    pub fn new(negatives: Vec<Measurement<T>>, positives: Vec<Measurement<T>>) -> Result<Self> {
        let dim = validate_parts(&negatives, &positives)?;
        Ok(TrainingPopulation {
            negatives,
            positives,
            dim,
        })
    }

    /// Builds a population from raw coordinate vectors, validating each one.
    pub fn from_coords(negatives: Vec<Vec<T>>, positives: Vec<Vec<T>>) -> Result<Self> {
        let negatives = negatives
            .into_iter()
            .map(Measurement::new)
            .collect::<Result<Vec<_>>>()?;
        let positives = positives
            .into_iter()
            .map(Measurement::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(negatives, positives)
    }

    pub fn from_labeled(samples: Vec<LabeledSample<T>>) -> Result<Self> {
        let (mut negatives, mut positives) = (Vec::new(), Vec::new());
        for s in samples {
            match s.label {
                Class::Negative => negatives.push(s.r),
                Class::Positive => positives.push(s.r),
            }
        }
        Self::new(negatives, positives)
    }

    pub fn negatives(&self) -> &[Measurement<T>] {
        &self.negatives
    }

    pub fn positives(&self) -> &[Measurement<T>] {
        &self.positives
    }

    pub fn class(&self, c: Class) -> &[Measurement<T>] {
        match c {
            Class::Negative => &self.negatives,
            Class::Positive => &self.positives,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    /// Prevalence of the training set itself, `n_p / (n_p + n_n)`.
    pub fn training_prevalence(&self) -> f64 {
        self.n_pos() as f64 / (self.n_pos() + self.n_neg()) as f64
    }

    /// All samples, negatives first.
    pub fn iter(&self) -> impl Iterator<Item = (Class, &Measurement<T>)> {
        self.negatives
            .iter()
            .map(|r| (Class::Negative, r))
            .chain(self.positives.iter().map(|r| (Class::Positive, r)))
    }
}

fn validate_parts<T: Scalar>(
    negatives: &[Measurement<T>],
    positives: &[Measurement<T>],
) -> Result<usize> {
    if negatives.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    if positives.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    for p in negatives.iter().chain(positives) {
        if let Some((index, v)) = p.coords().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                index,
                value: v.as_f64(),
            });
        }
    }
    Ok(common_dim(negatives.iter().chain(positives))?.expect("non-empty"))
}

/// Checks every training-population invariant.
pub fn validate_population<T: Scalar>(pop: &TrainingPopulation<T>) -> Result<()> {
    let dim = validate_parts(&pop.negatives, &pop.positives)?;
    check_dim(pop.dim, dim)
}

/// Unlabeled samples, optionally carrying true labels for validation.
#[derive(Clone, Debug, PartialEq)]
pub struct TestPopulation<T> {
    samples: Vec<Measurement<T>>,
    true_labels: Option<Vec<Class>>,
    dim: usize,
}

impl<T: Scalar> TestPopulation<T> {
    pub fn new(samples: Vec<Measurement<T>>, true_labels: Option<Vec<Class>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("test population is empty".into()));
        }
        if let Some(labels) = &true_labels {
            if labels.len() != samples.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} true labels for {} samples",
                    labels.len(),
                    samples.len()
                )));
            }
        }
        let dim = common_dim(&samples)?.expect("non-empty");
        Ok(TestPopulation {
            samples,
            true_labels,
            dim,
        })
    }

    pub fn from_coords(samples: Vec<Vec<T>>) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(Measurement::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, None)
    }

    pub fn samples(&self) -> &[Measurement<T>] {
        &self.samples
    }

    pub fn true_labels(&self) -> Option<&[Class]> {
        self.true_labels.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples whose true label is positive, if labels are known.
    pub fn true_prevalence(&self) -> Option<f64> {
        self.true_labels
            .as_ref()
            .map(|l| l.iter().filter(|&&c| c == Class::Positive).count() as f64 / l.len() as f64)
    }
}
