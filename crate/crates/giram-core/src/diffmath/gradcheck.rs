use super::graph::{Graph, Var};
use super::params::ParameterSet;
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences.
///
/// `f` must rebuild the same scalar computation from scratch on every call
/// (any stochastic inputs have to be fixed outside the closure). Returns the
/// maximum relative discrepancy across all parameter coordinates; for
/// coordinates where both gradients are near zero the absolute difference is
/// used instead.
pub fn grad_check<F>(f: F, params: &ParameterSet, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Config("grad_check eps must be positive".into()));
    }
    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::Shape("grad_check target must be scalar".into()));
        }
        let val = v.item();
        if !val.is_finite() {
            return Err(Error::Numeric("non-finite objective in grad_check".into()));
        }
        Ok(val)
    };
    eval(params)?;

    let mut graph = Graph::new();
    let out = f(&mut graph, params)?;
    let analytic = graph.backward(out)?;

    let mut max_err: f64 = 0.0;
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name).unwrap().len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += eps;
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= eps;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
            let denom = a.abs().max(fd.abs());
            let err = if denom < 1e-6 {
                (a - fd).abs()
            } else {
                (a - fd).abs() / denom
            };
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::tensor::Tensor;

    #[test]
    fn constant_function_has_zero_error() {
        let mut p = ParameterSet::new(0);
        p.set("x", Tensor::vector(vec![1.0, 2.0]));
        let err = grad_check(
            |g, _| {
                let c = g.input(Tensor::scalar(3.0));
                Ok(c)
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sum_of_squares_is_tight() {
        let mut p = ParameterSet::new(1);
        p.set("x", Tensor::vector(vec![0.3, -1.2, 2.5]));
        let err = grad_check(
            |g, ps| {
                let x = g.param("x", ps)?;
                Ok(g.sum_sq(x))
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn linear_sigmoid_composition_passes() {
        let mut p = ParameterSet::new(2);
        p.init_matrix("w", 3, 3);
        p.init_zeros("b", &[3]);
        p.get_mut("b").unwrap().data_mut()[1] = 0.25;
        let x = vec![0.4, -0.7, 1.1];
        let err = grad_check(
            |g, ps| {
                let w = g.param("w", ps)?;
                let b = g.param("b", ps)?;
                let xv = g.input(Tensor::vector(x.clone()));
                let y = g.linear(w, xv, b)?;
                let s = g.sigmoid(y);
                Ok(g.sum_sq(s))
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }
}
