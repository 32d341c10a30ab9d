use crate::{Error, Result};

/// One function evaluation for gradient checking. `signature` identifies the
/// smooth piece the evaluation fell on (see [`super::Tape::signature`]); use
/// 0 when the function has no kinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub signature: u64,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Self {
            value,
            signature: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h probe crossed a kink (changed signature).
    pub skipped: usize,
}

/// Compares `analytic` against five-point central differences of `f` around `w`.
///
/// Relative error per coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Coordinates whose perturbed
/// evaluations (at ±h and ±2h) land on a different smooth piece than `w` are skipped and
/// counted.
pub fn finite_diff_check<F, P>(mut f: F, w: &[f64], analytic: &[f64], h: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<P>,
    P: Into<Probe>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    if w.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} weights but {} gradient entries",
            w.len(),
            analytic.len()
        )));
    }
    let mut eval = |x: &[f64]| -> Result<Probe> {
        let p: Probe = f(x)?.into();
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated to {}",
                p.value
            )));
        }
        Ok(p)
    };
    let base = eval(w)?;
    let mut x = w.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for i in 0..w.len() {
        let mut at = |offset: f64| -> Result<Probe> {
            x[i] = w[i] + offset;
            let p = eval(&x);
            x[i] = w[i];
            p
        };
        let probes = [at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?];
        if probes.iter().any(|p| p.signature != base.signature) {
            out.skipped += 1;
            continue;
        }
        let [p2, p1, m1, m2] = probes.map(|p| p.value);
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        out.checked += 1;
        if rel > out.max_rel_error || out.worst_index.is_none() {
            out.max_rel_error = out.max_rel_error.max(rel);
            if rel >= out.max_rel_error {
                out.worst_index = Some(i);
            }
        }
    }
    Ok(out)
}
