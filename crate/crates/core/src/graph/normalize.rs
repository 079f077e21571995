use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-dimension min-max rescaling into `[0, 1]`.
///
/// Constant columns map to 0. Any non-finite value is an error.
pub fn normalize_features<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    let (n, d) = (ds.num_nodes(), ds.dim());
    let x = ds.features();
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "feature of node {} dimension {} is not finite",
            i / d.max(1),
            i % d.max(1)
        )));
    }
    let mut lo = vec![T::infinity(); d];
    let mut hi = vec![T::neg_infinity(); d];
    for row in x.chunks_exact(d.max(1)).take(n) {
        for j in 0..d {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d.max(1)).take(n) {
        for j in 0..d {
            let range = hi[j] - lo[j];
            out.push(if range > T::zero() {
                ((row[j] - lo[j]) / range).min(T::one())
            } else {
                T::zero()
            });
        }
    }
    ds.with_features(out, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    fn column(values: &[f64]) -> Vec<f64> {
        let ds: Dataset<f64> = labeled(values.len(), &[], values, 1, &vec![0; values.len()]);
        normalize_features(&ds).unwrap().features().to_vec()
    }

    #[test]
    fn min_max_identity() {
        assert_eq!(column(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        assert_eq!(column(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_features_unchanged() {
        let x = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let ds: Dataset<f64> = labeled(3, &[], &x, 2, &[0; 3]);
        assert_eq!(normalize_features(&ds).unwrap().features(), &x);
    }

    #[test]
    fn non_finite_rejected() {
        let ds: Dataset<f64> = labeled(2, &[], &[1.0, f64::NAN], 1, &[0; 2]);
        assert!(matches!(normalize_features(&ds), Err(Error::Numeric(_))));
    }
}
