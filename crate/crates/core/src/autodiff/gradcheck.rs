//! Central finite-difference verification of analytic gradients.

use super::{AutodiffError, Graph, NodeId, ParamStore};

/// Errors are measured per parameter tensor, `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`,
/// which is the scalar formula when the tensor has one element. A per-scalar
/// ratio is meaningless for components near zero: a central difference at
/// ε = 1e-5 carries rounding noise of roughly `|f| · 2⁻⁵² / ε`, which swamps
/// any gradient entry below about 1e-7.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter where the maximum occurred.
    pub worst: Option<String>,
    /// Largest per-scalar relative error, with its location. Diagnostic only.
    pub worst_scalar: Option<(String, usize, f64)>,
    /// Gradient norms of the worst parameter.
    pub analytic: f64,
    pub numeric: f64,
    pub scalars_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F, E>(builder: &F, params: &ParamStore) -> Result<f64, E>
where
    F: Fn(&mut Graph) -> Result<NodeId, E>,
    E: From<AutodiffError>,
{
    let mut g = Graph::new(params);
    let loss = builder(&mut g)?;
    if let Some(bad) = g.first_non_finite() {
        return Err(AutodiffError::NonFinite(bad.index()).into());
    }
    if !g.value(loss).is_scalar() {
        return Err(AutodiffError::NonScalarLoss {
            node: loss.index(),
            shape: g.value(loss).shape().to_vec(),
        }
        .into());
    }
    Ok(g.value(loss).item())
}

/// Compares backpropagated gradients of every parameter scalar against
/// central differences with step `epsilon`.
pub fn grad_check<F, E>(builder: F, params: &ParamStore, epsilon: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph) -> Result<NodeId, E>,
    E: From<AutodiffError>,
{
    grad_check_with_bias(builder, params, epsilon, 1.0)
}

/// Same as [`grad_check`] but multiplies every analytic gradient by
/// `analytic_scale` first. A scale other than one is a negative control that
/// must make the check fail.
pub fn grad_check_with_bias<F, E>(
    builder: F,
    params: &ParamStore,
    epsilon: f64,
    analytic_scale: f64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph) -> Result<NodeId, E>,
    E: From<AutodiffError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = builder(&mut g)?;
        if let Some(bad) = g.first_non_finite() {
            return Err(AutodiffError::NonFinite(bad.index()).into());
        }
        let grads = g.backward(loss)?;
        let mut acc = params.zero_grads();
        g.accumulate_param_grads(&grads, &mut acc);
        acc
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_scalar: None,
        analytic: 0.0,
        numeric: 0.0,
        scalars_checked: 0,
    };
    let mut probe = params.clone();
    for id in params.ids() {
        let name = params.name(id);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..params.value(id).len() {
            let original = params.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = original + epsilon;
            let plus = evaluate(&builder, &probe)?;
            probe.value_mut(id).data_mut()[k] = original - epsilon;
            let minus = evaluate(&builder, &probe)?;
            probe.value_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(id).data()[k] * analytic_scale;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            report.scalars_checked += 1;
            let err = relative_error(a, numeric);
            if report.worst_scalar.as_ref().is_none_or(|w| err > w.2) {
                report.worst_scalar = Some((name.to_string(), k, err));
            }
        }
        let err = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-8);
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = err;
            report.worst = Some(name.to_string());
            report.analytic = a2.sqrt();
            report.numeric = n2.sqrt();
        }
    }
    Ok(report)
}
