use rand::Rng;

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<F>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let len = shape.iter().product();
        let value = (0..len)
            .map(|_| F::lit(rng.random_range(-bound..=bound)))
            .collect();
        self.add(name, shape, value)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f64) -> ParamId {
        let len = shape.iter().product();
        self.add(name, shape, vec![F::lit(v); len])
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    /// Converts every value to another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| G::lit(v.f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers matching a [`ParamStore`] one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Real> Grads<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Grads {
            grads: store
                .params
                .iter()
                .map(|p| vec![F::zero(); p.value.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.grads[id.0]
    }

    pub fn all(&self) -> &[Vec<F>] {
        &self.grads
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.f64() * g.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
