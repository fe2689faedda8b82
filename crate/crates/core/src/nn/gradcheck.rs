//! Central finite-difference gradient checking.

use super::{Graph, NnError, Tensor, Var};

/// Result of evaluating a scalar objective: value and analytic gradient per
/// input tensor.
pub type Evaluation = (f64, Vec<Tensor>);

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor: errors are `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per input; `None`
    /// checks all of them.
    pub max_per_input: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, floor: 1e-6, max_per_input: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Compares the analytic gradients returned by `f` with central
/// differences of its value, element by element, for every input.
pub fn grad_check<F>(inputs: &[Tensor], f: F, cfg: GradCheckConfig) -> Result<GradCheckReport, NnError>
where
    F: Fn(&[Tensor]) -> Result<Evaluation, NnError>,
{
    let (_, analytic) = f(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(NnError::ShapeMismatch("objective returned wrong number of gradients".into()));
    }
    let mut work = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (ti, grad) in analytic.iter().enumerate() {
        let mut rep = InputReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        let n = work[ti].len();
        let indices: Vec<usize> = match cfg.max_per_input {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        for k in indices {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + cfg.step;
            let (fp, _) = f(&work)?;
            work[ti].data_mut()[k] = orig - cfg.step;
            let (fm, _) = f(&work)?;
            work[ti].data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = grad.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if err > rep.max_rel_error || !err.is_finite() {
                rep = InputReport { max_rel_error: err, worst_index: k, analytic: a, numeric };
            }
        }
        reports.push(rep);
    }
    Ok(GradCheckReport { inputs: reports, tolerance: cfg.tolerance })
}

/// Wraps a graph-building closure as an objective for [`grad_check`]. Every
/// input tensor becomes a leaf; the closure returns the scalar output node.
pub fn graph_objective<B>(build: B) -> impl Fn(&[Tensor]) -> Result<Evaluation, NnError>
where
    B: Fn(&mut Graph<'_>, &[Var]) -> Result<Var, NnError>,
{
    move |inputs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
        let out = build(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "gradient check needs a scalar output, got {:?}",
                g.value(out).shape()
            )));
        }
        let value = g.value(out).data()[0];
        let mut grads = g.backward(out)?;
        let gs = vars.iter().zip(inputs).map(|(v, t)| grads.take_or_zeros(*v, t)).collect();
        Ok((value, gs))
    }
}
