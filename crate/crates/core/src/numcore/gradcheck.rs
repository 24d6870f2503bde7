use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{HarpError, Result};
use crate::scalar::Scalar;

/// Compares tape gradients against central finite differences.
///
/// `loss_fn` records a scalar loss on a fresh graph. Returns the maximum over
/// all parameter entries of `|analytic − numeric| / max(1, |numeric|)`.
/// Leaves `params` values unchanged and its grads holding the analytic result.
pub fn backward_and_check<T, F>(loss_fn: F, params: &mut ParameterStore<T>, epsilon: f64) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParameterStore<T>) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(HarpError::Contract(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let eval = |store: &ParameterStore<T>| -> Result<T> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        let v = g.scalar(l);
        if !v.is_finite() {
            return Err(HarpError::Numeric("non-finite loss".into()));
        }
        Ok(v)
    };

    params.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    g.backward(loss)?.accumulate_into(params);

    let eps = T::lit(epsilon);
    let two_eps = eps + eps;
    let mut worst = T::zero();
    let ids: Vec<_> = (0..params.len()).map(super::ParamId).collect();
    for id in ids {
        for k in 0..params.get(id).value.len() {
            let orig = params.get(id).value.data()[k];
            params.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus? - minus?) / two_eps;
            let analytic = params.get(id).grad.data()[k];
            let err = (analytic - numeric).abs() / numeric.abs().max(T::one());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
