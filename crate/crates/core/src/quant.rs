//! Quantization level sets and Euclidean projection onto them.
//!
//! A quantized layer takes values in `{-a, a}` (binary) or `{-a, 0, a}`
//! (ternary) for a per-layer scale `a > 0`. Projection for a fixed scale is
//! elementwise nearest-level rounding; the joint projection over scale and
//! assignment alternates between the two closed-form partial minimizers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    Binary,
    Ternary,
    /// Kept in full precision: trained, but never penalized or projected.
    Excluded,
}

impl QuantMode {
    /// Number of quantization levels, `None` for excluded layers.
    pub fn level_count(self) -> Option<usize> {
        match self {
            QuantMode::Binary => Some(2),
            QuantMode::Ternary => Some(3),
            QuantMode::Excluded => None,
        }
    }

    /// Storage bits per weight in packed form.
    pub fn bits_per_weight(self) -> u32 {
        match self {
            QuantMode::Binary => 1,
            QuantMode::Ternary => 2,
            QuantMode::Excluded => 64,
        }
    }

    pub fn is_quantized(self) -> bool {
        self != QuantMode::Excluded
    }

    /// Level set for scale `alpha`, ordered by increasing magnitude, `+a` before `-a`.
    pub fn levels(self, alpha: f64) -> Vec<f64> {
        match self {
            QuantMode::Binary => vec![alpha, -alpha],
            QuantMode::Ternary => vec![0.0, alpha, -alpha],
            QuantMode::Excluded => Vec::new(),
        }
    }
}

/// Quantization setting of one weight-bearing layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerQuant {
    pub mode: QuantMode,
    /// Scaling factor; present exactly when the layer is quantized.
    pub alpha: Option<f64>,
}

/// Per-layer quantization specification for a whole model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantScheme {
    pub layers: Vec<LayerQuant>,
}

impl QuantScheme {
    /// Scheme with `modes[i]` for layer `i`, scales initialized by [`init_alpha`].
    pub fn init(weights: &[&Tensor], modes: &[QuantMode]) -> Result<Self> {
        if weights.len() != modes.len() {
            return Err(Error::Config(format!(
                "{} quantization modes for {} weight layers",
                modes.len(),
                weights.len()
            )));
        }
        let layers = weights
            .iter()
            .zip(modes)
            .enumerate()
            .map(|(i, (w, &mode))| {
                let alpha = if mode.is_quantized() {
                    Some(init_alpha(w).map_err(|e| Error::Quant(format!("layer {i}: {e}")))?)
                } else {
                    None
                };
                Ok(LayerQuant { mode, alpha })
            })
            .collect::<Result<_>>()?;
        Ok(QuantScheme { layers })
    }

    /// Same mode on every layer except `excluded` (weight-layer indices).
    pub fn uniform(weights: &[&Tensor], mode: QuantMode, excluded: &[usize]) -> Result<Self> {
        if let Some(&bad) = excluded.iter().find(|&&i| i >= weights.len()) {
            return Err(Error::Config(format!(
                "excluded layer {bad} out of range for {} weight layers",
                weights.len()
            )));
        }
        let modes: Vec<QuantMode> = (0..weights.len())
            .map(|i| {
                if excluded.contains(&i) {
                    QuantMode::Excluded
                } else {
                    mode
                }
            })
            .collect();
        QuantScheme::init(weights, &modes)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            match (l.mode.is_quantized(), l.alpha) {
                (true, Some(a)) if a > 0.0 && a.is_finite() => {}
                (false, None) => {}
                _ => {
                    return Err(Error::Quant(format!(
                        "layer {i}: mode {:?} with scale {:?}",
                        l.mode, l.alpha
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Whether every quantized layer of `weights` lies exactly in its level set.
    pub fn first_infeasible(&self, weights: &[&Tensor]) -> Option<usize> {
        self.layers
            .iter()
            .zip(weights)
            .position(|(l, w)| match l.alpha {
                Some(alpha) => !is_feasible(w, l.mode, alpha),
                None => false,
            })
    }
}

/// A tensor whose entries all lie in a level set, with the scale that defines it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    values: Tensor,
    alpha: f64,
    mode: QuantMode,
}

impl QuantizedLayer {
    /// Wraps `values`, checking exact membership in the level set.
    pub fn new(values: Tensor, mode: QuantMode, alpha: f64) -> Result<Self> {
        if !mode.is_quantized() || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Quant(format!(
                "invalid level set {mode:?} with scale {alpha}"
            )));
        }
        if !is_feasible(&values, mode, alpha) {
            return Err(Error::Quant(
                "values are not members of the level set".into(),
            ));
        }
        Ok(QuantizedLayer {
            values,
            alpha,
            mode,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }
}

/// Initial scale: mean absolute weight.
pub fn init_alpha(weights: &Tensor) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Quant("cannot scale an empty tensor".into()));
    }
    let alpha = weights.data().iter().map(|w| w.abs()).sum::<f64>() / weights.len() as f64;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Quant(format!(
            "mean |w| = {alpha}; an all-zero or non-finite tensor has no valid scale"
        )));
    }
    Ok(alpha)
}

/// Level code for one entry: `0`, `+1` or `-1` times `alpha`.
///
/// Nearest level by absolute distance; ties go to the smaller magnitude, and
/// the binary tie at exactly zero goes to `+alpha`.
fn nearest_code(w: f64, mode: QuantMode, alpha: f64) -> i8 {
    let d_pos = (w - alpha).abs();
    let d_neg = (w + alpha).abs();
    match mode {
        QuantMode::Binary => {
            if d_neg < d_pos {
                -1
            } else {
                1
            }
        }
        QuantMode::Ternary => {
            let d_zero = w.abs();
            if d_zero <= d_pos && d_zero <= d_neg {
                0
            } else if d_pos <= d_neg {
                1
            } else {
                -1
            }
        }
        QuantMode::Excluded => unreachable!("excluded layers are never projected"),
    }
}

fn codes_to_values(codes: &[i8], alpha: f64) -> Vec<f64> {
    codes
        .iter()
        .map(|&c| match c {
            1 => alpha,
            -1 => -alpha,
            _ => 0.0,
        })
        .collect()
}

fn check_projectable(weights: &Tensor, mode: QuantMode) -> Result<()> {
    if !mode.is_quantized() {
        return Err(Error::Quant("excluded layers have no level set".into()));
    }
    if !weights.is_finite() {
        return Err(Error::NonFinite {
            context: "tensor to project".into(),
        });
    }
    Ok(())
}

/// Euclidean projection onto the level set with scale `alpha` held fixed.
pub fn project_fixed_alpha(
    weights: &Tensor,
    mode: QuantMode,
    alpha: f64,
) -> Result<QuantizedLayer> {
    check_projectable(weights, mode)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Quant(format!("scale must be positive, got {alpha}")));
    }
    let codes: Vec<i8> = weights
        .data()
        .iter()
        .map(|&w| nearest_code(w, mode, alpha))
        .collect();
    Ok(QuantizedLayer {
        values: Tensor::new(weights.shape().to_vec(), codes_to_values(&codes, alpha))?,
        alpha,
        mode,
    })
}

/// `||w - q||_F^2`
pub fn projection_error(weights: &Tensor, q: &Tensor) -> f64 {
    weights
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn objective(w: &[f64], codes: &[i8], alpha: f64) -> f64 {
    w.iter()
        .zip(codes)
        .map(|(&x, &c)| {
            let d = x - f64::from(c) * alpha;
            d * d
        })
        .sum()
}

const MAX_ALTERNATIONS: usize = 1000;

/// Joint projection over scale and level assignment, see [`project_optimal_traced`].
pub fn project_optimal(weights: &Tensor, mode: QuantMode) -> Result<QuantizedLayer> {
    project_optimal_traced(weights, mode).map(|(q, _)| q)
}

/// Minimizes `||W - Q||_F^2` over `a > 0` and level assignments by
/// alternating minimization, starting from `a = mean |w|`:
///
/// * assignment step: nearest level for the current `a`;
/// * scale step: `a = mean |w_e|` over entries assigned to `+-a`.
///
/// Stops when an assignment step leaves the assignment unchanged. For ternary
/// layers the fixed point is then compared with the best "largest k entries
/// nonzero" assignment (the global optimum); if that is strictly better the
/// alternation restarts from its scale. Also returns the objective after every
/// half-step, which never increases.
pub fn project_optimal_traced(
    weights: &Tensor,
    mode: QuantMode,
) -> Result<(QuantizedLayer, Vec<f64>)> {
    check_projectable(weights, mode)?;
    let w = weights.data();
    let mut alpha = init_alpha(weights)?;
    let mut codes: Vec<i8> = w.iter().map(|&x| nearest_code(x, mode, alpha)).collect();
    let mut trace = vec![objective(w, &codes, alpha)];
    alternate(w, mode, &mut alpha, &mut codes, &mut trace);

    if mode == QuantMode::Ternary {
        let current = objective(w, &codes, alpha);
        let top_alpha = best_top_k_alpha(w);
        let top_codes: Vec<i8> = w
            .iter()
            .map(|&x| nearest_code(x, mode, top_alpha))
            .collect();
        let top = objective(w, &top_codes, top_alpha);
        if top < current {
            alpha = top_alpha;
            codes = top_codes;
            trace.push(top);
            alternate(w, mode, &mut alpha, &mut codes, &mut trace);
        }
    }

    let values = Tensor::new(weights.shape().to_vec(), codes_to_values(&codes, alpha))?;
    Ok((
        QuantizedLayer {
            values,
            alpha,
            mode,
        },
        trace,
    ))
}

fn alternate(
    w: &[f64],
    mode: QuantMode,
    alpha: &mut f64,
    codes: &mut Vec<i8>,
    trace: &mut Vec<f64>,
) {
    for _ in 0..MAX_ALTERNATIONS {
        let mut sum = 0.0;
        let mut count = 0usize;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for (&x, &c) in w.iter().zip(codes.iter()).filter(|(_, &c)| c != 0) {
            sum += f64::from(c) * x;
            count += 1;
            lo = lo.min(x.abs());
            hi = hi.max(x.abs());
        }
        if count == 0 {
            // Only reachable for ternary: keep the largest entry nonzero.
            let (i, &x) = w.iter().enumerate().fold((0, &w[0]), |best, cur| {
                if cur.1.abs() > best.1.abs() {
                    cur
                } else {
                    best
                }
            });
            codes[i] = if x >= 0.0 { 1 } else { -1 };
            *alpha = x.abs();
        } else {
            // equal magnitudes give their common value exactly, so already
            // feasible tensors project onto themselves bit for bit
            let next = if lo == hi { hi } else { sum / count as f64 };
            // the assignment step only ever pairs +a with w >= 0, so next > 0
            // unless every assigned entry is zero
            if next > 0.0 {
                *alpha = next;
            }
        }
        trace.push(objective(w, codes, *alpha));

        let next_codes: Vec<i8> = w.iter().map(|&x| nearest_code(x, mode, *alpha)).collect();
        let changed = next_codes != *codes;
        *codes = next_codes;
        trace.push(objective(w, codes, *alpha));
        if !changed {
            break;
        }
    }
}

/// Scale of the best ternary assignment that keeps the `k` largest
/// magnitudes nonzero, over all `k`: `a_k = mean` of those magnitudes and the
/// objective is `sum w^2 - k a_k^2`.
fn best_top_k_alpha(w: &[f64]) -> f64 {
    let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let (mut best_gain, mut best_alpha) = (f64::NEG_INFINITY, mags[0]);
    for (k, m) in mags.iter().enumerate() {
        prefix += m;
        let gain = prefix * prefix / (k + 1) as f64;
        if gain > best_gain {
            best_gain = gain;
            best_alpha = prefix / (k + 1) as f64;
        }
    }
    best_alpha
}

/// True iff every entry equals one of the levels exactly.
pub fn is_feasible(layer: &Tensor, mode: QuantMode, alpha: f64) -> bool {
    match mode {
        QuantMode::Excluded => true,
        QuantMode::Binary => layer.data().iter().all(|&v| v == alpha || v == -alpha),
        QuantMode::Ternary => layer
            .data()
            .iter()
            .all(|&v| v == alpha || v == -alpha || v == 0.0),
    }
}

/// Distinct values of a tensor with their counts, ascending.
pub fn level_histogram(layer: &Tensor) -> Vec<(f64, usize)> {
    let mut vals: Vec<f64> = layer.data().to_vec();
    vals.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for v in vals {
        match out.last_mut() {
            Some((last, n)) if *last == v => *n += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn init_alpha_examples() {
        assert_eq!(init_alpha(&t(&[1.0, -1.0, 1.0, -1.0])).unwrap(), 1.0);
        assert_eq!(init_alpha(&t(&[2.0, -4.0])).unwrap(), 3.0);
        assert!(init_alpha(&t(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn fixed_alpha_binary_tie_goes_positive() {
        let q = project_fixed_alpha(&t(&[0.3, -0.2, 0.0]), QuantMode::Binary, 0.5).unwrap();
        assert_eq!(q.values().data(), &[0.5, -0.5, 0.5]);
    }

    #[test]
    fn fixed_alpha_ternary_tie_goes_to_zero() {
        let q = project_fixed_alpha(&t(&[0.9, -0.4, 0.5]), QuantMode::Ternary, 1.0).unwrap();
        assert_eq!(q.values().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_optimum_is_mean_abs() {
        let (q, trace) = project_optimal_traced(&t(&[1.0, -3.0]), QuantMode::Binary).unwrap();
        assert_eq!(q.alpha(), 2.0);
        assert_eq!(q.values().data(), &[2.0, -2.0]);
        assert_eq!(*trace.last().unwrap(), 2.0);
    }

    #[test]
    fn feasible_input_is_a_fixed_point() {
        let c = 0.37;
        let w = t(&[c, -c, c]);
        let q = project_optimal(&w, QuantMode::Binary).unwrap();
        assert_eq!(q.alpha(), c);
        assert_eq!(projection_error(&w, q.values()), 0.0);
    }

    #[test]
    fn feasibility_examples() {
        let a = 0.25;
        assert!(is_feasible(&t(&[a, -a, a]), QuantMode::Binary, a));
        assert!(!is_feasible(&t(&[a, a / 2.0]), QuantMode::Binary, a));
        assert!(!is_feasible(&t(&[a, 0.0]), QuantMode::Binary, a));
        assert!(is_feasible(&t(&[a, 0.0]), QuantMode::Ternary, a));
    }

    #[test]
    fn all_zero_projection_is_rejected() {
        assert!(project_optimal(&t(&[0.0; 4]), QuantMode::Ternary).is_err());
    }

    #[test]
    fn scheme_validation() {
        let w = t(&[1.0, -2.0]);
        let s = QuantScheme::uniform(&[&w, &w], QuantMode::Ternary, &[1]).unwrap();
        assert_eq!(s.layers[0].alpha, Some(1.5));
        assert_eq!(s.layers[1].alpha, None);
        s.validate().unwrap();
        let bad = QuantScheme {
            layers: vec![LayerQuant {
                mode: QuantMode::Binary,
                alpha: None,
            }],
        };
        assert!(bad.validate().is_err());
        assert!(QuantScheme::uniform(&[&w], QuantMode::Binary, &[3]).is_err());
    }

    #[test]
    fn histogram_counts_levels() {
        let h = level_histogram(&t(&[0.5, -0.5, 0.5, 0.0]));
        assert_eq!(h, vec![(-0.5, 1), (0.0, 1), (0.5, 2)]);
    }
}
