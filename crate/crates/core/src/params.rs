//! Named parameter storage shared by the segmentation and policy networks.

use rand::Rng;

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, value: S) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            data: vec![value; len],
        }
    }

    /// Uniform on `[-bound, bound]` with `bound = 1 / sqrt(fan_in)`.
    pub fn fan_in_uniform(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| S::from_f64_lossy(rng.random_range(-bound..=bound)))
            .collect();
        Param {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered parameter list. Gradient buffers use the same layout.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new(params: Vec<Param<S>>) -> Self {
        ParamSet { params }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param::zeros(p.name.clone(), p.shape.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<S>> {
        self.params.iter_mut()
    }

    pub fn as_slice(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.data.fill(S::zero());
        }
    }

    /// Sum of squares over every entry.
    pub fn sq_norm(&self) -> S {
        self.params
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|&v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| T::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}

impl<'a, S> IntoIterator for &'a ParamSet<S> {
    type Item = &'a Param<S>;
    type IntoIter = std::slice::Iter<'a, Param<S>>;

    fn into_iter(self) -> Self::IntoIter {
        self.params.iter()
    }
}
