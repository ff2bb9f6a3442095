use crate::autodiff::AutodiffError;
use crate::scalar::Scalar;

/// Dense row-major tensor with an optional gradient buffer.
///
/// A tensor with an empty shape is a scalar holding one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, values: Vec<T>) -> Result<Self, AutodiffError> {
        let shape = shape.into();
        let expected = numel(&shape);
        if shape.contains(&0) || expected != values.len() {
            return Err(AutodiffError::BadShape {
                shape,
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![T::zero(); n]).expect("zero-sized dimension")
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![value; n]).expect("zero-sized dimension")
    }

    pub fn scalar(value: T) -> Self {
        Self::new(Vec::new(), vec![value]).expect("scalar")
    }

    /// One-dimensional tensor.
    pub fn vector(values: Vec<T>) -> Self {
        let n = values.len();
        Self::new(vec![n], values).expect("empty vector")
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Sums `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<(), AutodiffError> {
        if delta.len() != self.values.len() {
            return Err(AutodiffError::BadShape {
                shape: self.shape.clone(),
                expected: self.values.len(),
                actual: delta.len(),
            });
        }
        let grad = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn grad_and_values_mut(&mut self) -> (Option<&mut Vec<T>>, &mut Vec<T>) {
        (self.grad.as_mut(), &mut self.values)
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(AutodiffError::BadShape { expected: 6, actual: 5, .. })
        ));
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(2.5f32);
        assert!(s.shape().is_empty());
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(vec![2]).with_grad();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        assert_eq!(t.grad(), Some(&[1.5, 2.5][..]));
        t.zero_grad();
        assert_eq!(t.grad(), Some(&[0.0, 0.0][..]));
    }
}
