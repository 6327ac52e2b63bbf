//! Central finite-difference checks against the analytic reverse sweep.

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{ParamStore, Session};
use crate::numerics::tensor::Tensor;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over coordinates of |analytic − central difference| / max(1, |analytic|)
/// for the scalar function `f` at `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let loss = f(&mut g, xv)?;
    let grads = g.backward(loss)?;
    let analytic = grads
        .get(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(t, false);
        let l = f(&mut g, v)?;
        Ok(g.value(l).data()[0])
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check with respect to named parameters of a [`ParamStore`]; `f`
/// builds the scalar loss inside a [`Session`].
pub fn finite_diff_check_params<F>(
    store: &ParamStore,
    names: &[&str],
    f: F,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let mut trainable = store.clone();
    trainable.set_trainable_prefixes(names);
    let analytic = {
        let mut s = Session::new(&trainable);
        let loss = f(&mut s)?;
        let grads = s.graph.backward(loss)?;
        s.param_grads(&grads)
    };
    let eval = |st: &ParamStore| -> Result<f64> {
        let mut s = Session::inference(st);
        let l = f(&mut s)?;
        Ok(s.graph.value(l).data()[0])
    };
    let mut worst: f64 = 0.0;
    for name in names {
        let base = store.tensor(name)?.clone();
        let zeros = Tensor::zeros(base.shape());
        let a = analytic.get(*name).unwrap_or(&zeros);
        for i in 0..base.numel() {
            let mut st = store.clone();
            st.get_mut(name).expect("present").value.data_mut()[i] += eps;
            let up = eval(&st)?;
            st.get_mut(name).expect("present").value.data_mut()[i] -= 2.0 * eps;
            let down = eval(&st)?;
            worst = worst.max(rel_err(a.data()[i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
