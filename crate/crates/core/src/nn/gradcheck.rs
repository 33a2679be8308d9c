use std::collections::HashMap;

use super::layers::NnError;
use super::matrix::Matrix;
use super::params::ParameterStore;

/// One evaluation of the checked function: its value and a signature of
/// its piecewise-smooth branch (e.g. [`super::Tape::kink_signature`]); use 0
/// for functions without kinks.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub value: f64,
    pub signature: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Check at most this many entries per parameter (evenly spaced).
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-3,
            tol: 1e-4,
            floor: 1e-6,
            max_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<EntryError>,
    /// Entries above tolerance.
    pub flagged: Vec<EntryError>,
    pub checked: usize,
    /// Entries where every step size tried crossed a kink; not compared.
    pub skipped_kinks: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty() && self.max_rel_error < self.tol
    }

    pub fn flagged_params(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.flagged.iter().map(|e| e.param.as_str()).collect();
        v.dedup();
        v
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `analytic` gradients to five-point central differences of `f`
/// for every parameter entry of `store`. Step sizes are shrunk tenfold (twice) when a
/// perturbation changes the branch signature.
pub fn gradient_check(
    store: &ParameterStore,
    analytic: &HashMap<String, Matrix<f64>>,
    mut f: impl FnMut(&ParameterStore) -> Probe,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let base = f(store);
    if !base.value.is_finite() {
        return Err(NnError::Invalid(format!("non-finite value {}", base.value)));
    }
    let mut report = GradCheckReport {
        tol: opts.tol,
        ..Default::default()
    };
    let mut work = store.clone();
    for name in store.names() {
        let g = analytic
            .get(name)
            .ok_or_else(|| NnError::Invalid(format!("no analytic gradient for {name}")))?;
        let len = store.expect(name).data().len();
        if g.data().len() != len {
            return Err(NnError::Invalid(format!("gradient shape mismatch for {name}")));
        }
        let indices: Vec<usize> = match opts.max_per_param {
            Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
            _ => (0..len).collect(),
        };
        for idx in indices {
            let x0 = store.expect(name).data()[idx];
            let mut h = opts.h;
            let mut numeric = None;
            for _ in 0..3 {
                let mut probes = [0.0; 4];
                let mut same_branch = true;
                for (p, step) in probes.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                    work.get_mut(name).unwrap().data_mut()[idx] = x0 + step * h;
                    let r = f(&work);
                    if !r.value.is_finite() {
                        work.get_mut(name).unwrap().data_mut()[idx] = x0;
                        return Err(NnError::Invalid(format!("non-finite value perturbing {name}[{idx}]")));
                    }
                    same_branch &= r.signature == base.signature;
                    *p = r.value;
                }
                work.get_mut(name).unwrap().data_mut()[idx] = x0;
                if same_branch {
                    numeric = Some((-probes[0] + 8.0 * probes[1] - 8.0 * probes[2] + probes[3]) / (12.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.skipped_kinks += 1;
                continue;
            };
            let a = g.data()[idx];
            let rel = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            let entry = EntryError {
                param: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error: rel,
            };
            if rel >= opts.tol {
                report.flagged.push(entry.clone());
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(entry);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::new(0);
        s.insert("x", Matrix::filled(1, 1, x)).unwrap();
        s
    }

    fn square(s: &ParameterStore) -> Probe {
        let x = s.expect("x").get(0, 0);
        Probe { value: x * x, signature: 0 }
    }

    #[test]
    fn square_at_three() {
        let s = store(3.0);
        let g = HashMap::from([("x".to_string(), Matrix::filled(1, 1, 6.0))]);
        let r = gradient_check(&s, &g, square, GradCheckOptions::default()).unwrap();
        assert!(r.passed());
        assert!((r.worst.unwrap().numeric - 6.0).abs() < 1e-8);
    }

    #[test]
    fn wrong_backward_is_flagged() {
        let s = store(3.0);
        // d(x²)/dx written as x instead of 2x
        let g = HashMap::from([("x".to_string(), Matrix::filled(1, 1, 3.0))]);
        let r = gradient_check(&s, &g, square, GradCheckOptions::default()).unwrap();
        assert!(!r.passed());
        assert_eq!(r.flagged_params(), vec!["x"]);
    }
}
