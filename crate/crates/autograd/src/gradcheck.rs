//! Central finite-difference gradient checks (always in `f64`).

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Absolute floor of the relative-error denominator, so that parameters with
/// vanishing gradients are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EntryError {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<EntryError>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &EntryError> {
        self.entries
            .iter()
            .filter(move |e| !(e.max_relative_error < self.tolerance))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn scalar_loss(g: &Graph<f64>, loss: Var) -> f64 {
    g.value(loss).item()
}

/// Checks every trainable parameter of `store` against central differences of
/// the loss built by `build`. `build` is re-run once per perturbed scalar, so
/// the network must be small.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    mut build: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss)?;
    store.zero_grads();
    store.accumulate_grads(&g)?;
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let mut entries = Vec::new();
    for id in ids {
        let analytic = store.grad(id).data().to_vec();
        let mut worst = EntryError {
            name: store.param(id).name.clone(),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: analytic.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        for (k, &a) in analytic.iter().enumerate() {
            let original = store.param(id).value.data()[k];
            let mut eval = |v: f64, store: &mut ParamStore<f64>| -> Result<f64> {
                store.value_mut(id).data_mut()[k] = v;
                let mut g = Graph::new();
                let l = build(&mut g, store)?;
                Ok(scalar_loss(&g, l))
            };
            let plus = eval(original + step, store)?;
            let minus = eval(original - step, store)?;
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if k == 0 || err > worst.max_relative_error {
                worst.max_relative_error = err;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        entries.push(worst);
    }
    Ok(GradCheckReport { tolerance, entries })
}

/// Like [`grad_check`] but differentiates a loss with respect to free input
/// tensors rather than stored parameters.
pub fn grad_check_inputs<F>(
    inputs: &[Tensor<f64>],
    build: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor<f64>], diff: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if diff { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let loss = build(&mut g, &vars)?;
        let value = scalar_loss(&g, loss);
        if !diff {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| {
                g.grad(v)
                    .map(|gr| gr.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        Ok((value, grads))
    };
    let (_, analytic) = run(inputs, true)?;
    let mut values = inputs.to_vec();
    let mut entries = Vec::new();
    for (i, grads) in analytic.iter().enumerate() {
        let mut worst = EntryError {
            name: format!("input{i}"),
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (k, &a) in grads.iter().enumerate() {
            let original = values[i].data()[k];
            values[i].data_mut()[k] = original + step;
            let (plus, _) = run(&values, false)?;
            values[i].data_mut()[k] = original - step;
            let (minus, _) = run(&values, false)?;
            values[i].data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if k == 0 || err > worst.max_relative_error {
                worst.max_relative_error = err;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        entries.push(worst);
    }
    Ok(GradCheckReport { tolerance, entries })
}
