use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{param_group, GradientMap, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Real;
use super::DiffError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Tensors larger than this are checked on a random subset of this many
    /// coordinates; smaller tensors are checked exhaustively.
    pub coords_per_tensor: usize,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is zero are judged on absolute error.
    pub denom_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            coords_per_tensor: 100,
            denom_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub group: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub precision: &'static str,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    /// Parameter holding the largest relative error.
    pub worst_param: Option<String>,
    pub worst_group: Option<String>,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Groups (leading name segment) that were covered by the check.
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.tensors.iter().map(|t| t.group.clone()).collect();
        g.dedup();
        g.sort();
        g.dedup();
        g
    }
}

/// Checks `backward()` on the graph produced by `build` against central
/// finite differences of the same graph's forward value.
pub fn gradient_check<T, F>(params: &ParamSet, build: F, opts: &GradCheckOptions) -> Result<GradCheckReport, DiffError>
where
    T: Real,
    F: Fn(&mut Tape<T>, &ParamSet) -> Result<Var, DiffError>,
{
    let mut tape = Tape::<T>::new();
    let loss = build(&mut tape, params)?;
    let analytic = tape.backward(loss)?;
    let mut report = compare_gradients::<T, _>(
        params,
        &analytic,
        |p| {
            let mut t = Tape::<T>::new();
            let l = build(&mut t, p)?;
            Ok(t.scalar(l).as_f64())
        },
        opts,
    )?;
    report.precision = T::NAME;
    Ok(report)
}

/// Compares a supplied gradient map against finite differences of
/// `loss_value`. Exposed separately so a corrupted map can be checked.
pub fn compare_gradients<T, F>(
    params: &ParamSet,
    analytic: &GradientMap,
    mut loss_value: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, DiffError>
where
    T: Real,
    F: FnMut(&ParamSet) -> Result<f64, DiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut tensors = Vec::new();

    for (ti, p) in params.iter().enumerate() {
        let Some(grad) = analytic.get(&p.name) else {
            continue;
        };
        let coords: Vec<usize> = if p.len() <= opts.coords_per_tensor {
            (0..p.len()).collect()
        } else {
            let mut c = index::sample(&mut rng, p.len(), opts.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = TensorCheck {
            name: p.name.clone(),
            group: param_group(&p.name).to_string(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &coords {
            let orig = p.values[i];
            // Step in the precision the loss is evaluated in.
            let plus = T::lit(orig + opts.epsilon).as_f64();
            let minus = T::lit(orig - opts.epsilon).as_f64();
            work.tensors_mut()[ti].values[i] = plus;
            let f_plus = loss_value(&work)?;
            work.tensors_mut()[ti].values[i] = minus;
            let f_minus = loss_value(&work)?;
            work.tensors_mut()[ti].values[i] = orig;

            let numeric = (f_plus - f_minus) / (plus - minus);
            let a = grad[i];
            let denom = a.abs().max(numeric.abs()).max(opts.denom_floor);
            let rel = (a - numeric).abs() / denom;
            if rel > check.max_rel_error || !rel.is_finite() {
                check.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }

    let worst = tensors.iter().fold(None::<&TensorCheck>, |best, t| match best {
        Some(b) if b.max_rel_error >= t.max_rel_error => Some(b),
        _ => Some(t),
    });
    let max_rel_error = worst.map_or(0.0, |t| t.max_rel_error);
    Ok(GradCheckReport {
        precision: T::NAME,
        epsilon: opts.epsilon,
        tolerance: opts.tolerance,
        max_rel_error,
        worst_param: worst.map(|t| t.name.clone()),
        worst_group: worst.map(|t| t.group.clone()),
        passed: max_rel_error <= opts.tolerance,
        tensors,
    })
}
