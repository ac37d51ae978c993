//! Central finite-difference gradient checking.
//!
//! Only forward passes are used to form the numeric estimate, so the check
//! is independent of the backward implementation it validates.

use super::{Graph, NnError, ParameterSet, Var};

/// Floor on the relative-error denominator so that vanishing gradients do
/// not turn round-off into spurious failures.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of `loss` with central differences of step `h`
/// for every scalar of every parameter.
pub fn check_gradients<F>(params: &mut ParameterSet, h: f64, loss: F) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var, NnError>,
{
    let eval = |p: &ParameterSet| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let l = loss(&mut g, p)?;
        g.value(l)
            .item()
            .ok_or_else(|| NnError::Usage("loss is not scalar".into()))
    };

    params.zero_grad();
    let mut g = Graph::new();
    let l = loss(&mut g, params)?;
    g.backward(l, params)?;
    let analytic: Vec<Vec<f64>> = params
        .ids()
        .map(|id| params.grad(id).data().to_vec())
        .collect();
    params.zero_grad();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..params.value(id).len() {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + h;
            let up = eval(params)?;
            params.value_mut(id).data_mut()[j] = orig - h;
            let down = eval(params)?;
            params.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[pi][j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_owned(), j));
            }
        }
    }
    Ok(report)
}
