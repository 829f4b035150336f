//! Exact mutual information on small discrete joint distributions.
//!
//! This is the numeric ground truth for the decomposition the training
//! objective relies on: for one representation variable h and feature
//! variables x_1..x_n whose conditional p(h|x) factorizes as a product of
//! per-feature terms, the global MI I(h; X) is sandwiched between the
//! mean and the sum of the local MIs I(h; x_k). Everything here is a pure
//! function over an explicit probability table, so the inequalities can be
//! checked to floating-point accuracy rather than sampled.

use rand::Rng;
use thiserror::Error;

/// Comparison slack for the inequality checks. Probabilities are kept well
/// above log-underflow range when tables are sampled, so accumulated error
/// stays orders of magnitude below this.
pub const MI_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MiError {
    #[error("bad table: {detail}")]
    BadTable { detail: String },
    #[error("bad variable group: {detail}")]
    BadGroup { detail: String },
    #[error("table must hold one representation and at least one feature variable")]
    NeedsFeatures,
    #[error("conditional has a zero probability; factor reconstruction needs positive entries")]
    ZeroProbability,
}

/// A dense joint distribution over a product of finite variables. Entry
/// order is row-major with the LAST variable fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self, MiError> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(MiError::BadTable { detail: "every variable needs >= 1 state".into() });
        }
        let cells: usize = dims.iter().product();
        if probs.len() != cells {
            return Err(MiError::BadTable {
                detail: format!("{} entries for {} cells", probs.len(), cells),
            });
        }
        if let Some(p) = probs.iter().find(|&&p| !(p >= 0.0)) {
            return Err(MiError::BadTable { detail: format!("negative or NaN entry {p}") });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MiError::BadTable { detail: format!("entries sum to {total}") });
        }
        Ok(JointTable { dims, probs })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_vars(&self) -> usize {
        self.dims.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Cell count of the product space.
    pub fn cells(&self) -> usize {
        self.probs.len()
    }

    /// Decomposes a flat cell index into per-variable coordinates.
    fn coords(&self, mut index: usize, out: &mut [usize]) {
        for (k, &d) in self.dims.iter().enumerate().rev() {
            out[k] = index % d;
            index /= d;
        }
    }

    /// Flat index of a coordinate subset within the product of the group's
    /// dimensions (group order defines significance, first most significant).
    fn group_index(&self, coords: &[usize], group: &[usize]) -> usize {
        let mut idx = 0;
        for &var in group {
            idx = idx * self.dims[var] + coords[var];
        }
        idx
    }

    fn group_cells(&self, group: &[usize]) -> usize {
        group.iter().map(|&v| self.dims[v]).product()
    }
}

fn validate_groups(table: &JointTable, groups: &[&[usize]]) -> Result<(), MiError> {
    let mut seen = vec![false; table.n_vars()];
    for group in groups {
        if group.is_empty() {
            return Err(MiError::BadGroup { detail: "empty variable group".into() });
        }
        for &v in *group {
            if v >= table.n_vars() {
                return Err(MiError::BadGroup {
                    detail: format!("variable {v} outside table of {} variables", table.n_vars()),
                });
            }
            if seen[v] {
                return Err(MiError::BadGroup {
                    detail: format!("variable {v} appears in two groups"),
                });
            }
            seen[v] = true;
        }
    }
    Ok(())
}

/// Exact mutual information I(A; B) in nats between two disjoint variable
/// groups, marginalizing everything else. `0 log 0` terms contribute zero.
pub fn exact_mi(table: &JointTable, group_a: &[usize], group_b: &[usize]) -> Result<f64, MiError> {
    validate_groups(table, &[group_a, group_b])?;
    let na = table.group_cells(group_a);
    let nb = table.group_cells(group_b);
    let mut joint = vec![0.0f64; na * nb];
    let mut marg_a = vec![0.0f64; na];
    let mut marg_b = vec![0.0f64; nb];
    let mut coords = vec![0usize; table.n_vars()];
    for (cell, &p) in table.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        table.coords(cell, &mut coords);
        let a = table.group_index(&coords, group_a);
        let b = table.group_index(&coords, group_b);
        joint[a * nb + b] += p;
        marg_a[a] += p;
        marg_b[b] += p;
    }
    let mut mi = 0.0;
    for a in 0..na {
        for b in 0..nb {
            let p = joint[a * nb + b];
            if p > 0.0 {
                mi += p * (p / (marg_a[a] * marg_b[b])).ln();
            }
        }
    }
    Ok(mi)
}

/// Information can only grow when a side gains variables:
/// I(X,Y; Z) >= I(X; Z). True within [`MI_TOL`] on every joint table.
pub fn check_monotonicity(
    table: &JointTable,
    x: &[usize],
    y: &[usize],
    z: &[usize],
) -> Result<bool, MiError> {
    validate_groups(table, &[x, y, z])?;
    let mut xy = x.to_vec();
    xy.extend_from_slice(y);
    let both = exact_mi(table, &xy, z)?;
    let x_only = exact_mi(table, x, z)?;
    Ok(both >= x_only - MI_TOL)
}

/// Samples a joint whose conditional p(h | x_1..x_n) is EXACTLY a product of
/// per-feature factors. Variable 0 is h; the rest are features.
///
/// Construction: h-states are split into one block per feature. Within block
/// B_k the conditional is mu(h) * (1 + d_k(h, x_k)) where each deviation
/// column has mu-weighted zero sum, so the product form
/// r_k(h, x_k) = mu(h)^{1/n} (1 + d_k(h, x_k)) normalizes exactly: blocks
/// are disjoint, so every cross term vanishes pointwise and the per-x sums
/// telescope to 1. The feature marginal is an arbitrary positive table.
pub fn make_multiplicative(rng: &mut impl Rng, dims: &[usize]) -> Result<JointTable, MiError> {
    if dims.len() < 2 {
        return Err(MiError::NeedsFeatures);
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(MiError::BadTable { detail: "every variable needs >= 1 state".into() });
    }
    let h_states = dims[0];
    let n = dims.len() - 1;

    let mut mu: Vec<f64> = (0..h_states).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= total);

    // Contiguous h-blocks, one per feature; trailing features may get empty
    // blocks when h has fewer than 2n states (their factor is then constant
    // in x, which is still multiplicative).
    let base = h_states / n;
    let extra = h_states % n;
    let mut blocks: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut next = 0;
    for k in 0..n {
        let len = base + usize::from(k < extra);
        blocks.push((next..next + len).collect());
        next += len;
    }

    // deviations[k][x_k * h_states + h], nonzero only inside block k.
    let mut deviations: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, block) in blocks.iter().enumerate() {
        let states = dims[k + 1];
        let mut dev = vec![0.0f64; states * h_states];
        if block.len() >= 2 {
            let block_mass: f64 = block.iter().map(|&h| mu[h]).sum();
            for x in 0..states {
                let mut raw: Vec<f64> = block.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mean = block
                    .iter()
                    .zip(&raw)
                    .map(|(&h, &r)| mu[h] * r)
                    .sum::<f64>()
                    / block_mass;
                raw.iter_mut().for_each(|r| *r -= mean);
                let max = raw.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
                // Random magnitude keeps distinct x-columns from collapsing
                // onto the same deviation up to sign.
                let scale =
                    if max > 0.0 { rng.gen_range(0.15..1.0) * 0.45 / max } else { 0.0 };
                for (&h, &r) in block.iter().zip(&raw) {
                    dev[x * h_states + h] = r * scale;
                }
            }
        }
        deviations.push(dev);
    }

    let feature_cells: usize = dims[1..].iter().product();
    let mut feature_marginal: Vec<f64> =
        (0..feature_cells).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = feature_marginal.iter().sum();
    feature_marginal.iter_mut().for_each(|v| *v /= total);

    let mut probs = vec![0.0f64; h_states * feature_cells];
    let mut coords = vec![0usize; n];
    for (xcell, &px) in feature_marginal.iter().enumerate() {
        let mut rest = xcell;
        for k in (0..n).rev() {
            coords[k] = rest % dims[k + 1];
            rest /= dims[k + 1];
        }
        for h in 0..h_states {
            let mut cond = mu[h];
            for (k, dev) in deviations.iter().enumerate() {
                cond *= 1.0 + dev[coords[k] * h_states + h];
            }
            // Cell order matches dims [h, x_1..x_n]: h most significant.
            probs[h * feature_cells + xcell] = px * cond;
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    JointTable::new(dims.to_vec(), probs)
}

/// Largest absolute residual of fitting log p(h|x) with a sum of per-feature
/// terms, by alternating projections. A multiplicative conditional fits
/// exactly, so its residual is at floating-point scale; a genuinely joint
/// dependence leaves a residual no additive model can remove.
pub fn multiplicative_residual(table: &JointTable) -> Result<f64, MiError> {
    if table.n_vars() < 2 {
        return Err(MiError::NeedsFeatures);
    }
    let h_states = table.dims[0];
    let n = table.n_vars() - 1;
    let feature_cells: usize = table.dims[1..].iter().product();

    // log conditional, indexed [h][xcell]; every cell must be positive.
    let mut log_cond = vec![0.0f64; h_states * feature_cells];
    for xcell in 0..feature_cells {
        let px: f64 = (0..h_states).map(|h| table.probs[h * feature_cells + xcell]).sum();
        if px <= 0.0 {
            return Err(MiError::ZeroProbability);
        }
        for h in 0..h_states {
            let p = table.probs[h * feature_cells + xcell];
            if p <= 0.0 {
                return Err(MiError::ZeroProbability);
            }
            log_cond[h * feature_cells + xcell] = (p / px).ln();
        }
    }

    // residual starts as the target; each sweep moves the per-(h, x_k) mean
    // of the residual into that factor's theta, shrinking what remains.
    let mut residual = log_cond;
    let mut coords = vec![0usize; n];
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for k in 0..n {
            let states = table.dims[k + 1];
            let mut sums = vec![0.0f64; h_states * states];
            let mut counts = vec![0.0f64; h_states * states];
            for xcell in 0..feature_cells {
                let mut rest = xcell;
                for j in (0..n).rev() {
                    coords[j] = rest % table.dims[j + 1];
                    rest /= table.dims[j + 1];
                }
                for h in 0..h_states {
                    let slot = h * states + coords[k];
                    sums[slot] += residual[h * feature_cells + xcell];
                    counts[slot] += 1.0;
                }
            }
            for xcell in 0..feature_cells {
                let mut rest = xcell;
                for j in (0..n).rev() {
                    coords[j] = rest % table.dims[j + 1];
                    rest /= table.dims[j + 1];
                }
                for h in 0..h_states {
                    let slot = h * states + coords[k];
                    let shift = sums[slot] / counts[slot];
                    residual[h * feature_cells + xcell] -= shift;
                    moved = moved.max(shift.abs());
                }
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    Ok(residual.iter().fold(0.0f64, |m, &r| m.max(r.abs())))
}

/// The two-sided bound evaluated on one table, with variable 0 as h and the
/// rest as features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionCheck {
    /// Mean of the local MIs: (1/n) sum_k I(h; x_k).
    pub lower: f64,
    /// Global MI I(h; x_1..x_n).
    pub value: f64,
    /// Sum of the local MIs.
    pub upper: f64,
    /// value / sum of locals; None when every local MI is zero.
    pub weight: Option<f64>,
    /// Feature count n.
    pub n_features: usize,
    pub holds_lower: bool,
    pub holds_upper: bool,
    pub weight_in_range: bool,
}

impl DecompositionCheck {
    pub fn holds(&self) -> bool {
        self.holds_lower && self.holds_upper && self.weight_in_range
    }
}

/// Evaluates the sandwich `(1/n) sum_k I(h;x_k) <= I(h;X) <= sum_k I(h;x_k)`
/// and the realized weight `I(h;X) / sum_k I(h;x_k)`. The bounds are
/// theorems only for multiplicative conditionals; on other tables the result
/// reports whichever side breaks.
pub fn check_decomposition(table: &JointTable) -> Result<DecompositionCheck, MiError> {
    if table.n_vars() < 2 {
        return Err(MiError::NeedsFeatures);
    }
    let n = table.n_vars() - 1;
    let features: Vec<usize> = (1..=n).collect();
    let value = exact_mi(table, &[0], &features)?;
    let mut local_sum = 0.0;
    for k in 1..=n {
        local_sum += exact_mi(table, &[0], &[k])?;
    }
    let lower = local_sum / n as f64;
    let upper = local_sum;
    let holds_lower = lower - MI_TOL <= value;
    let holds_upper = value <= upper + MI_TOL;
    // Below this the locals are rounding noise and their ratio carries no
    // information; the upper bound still pins the global near zero.
    let (weight, weight_in_range) = if local_sum > 1e-9 {
        let w = value / local_sum;
        (Some(w), w >= 1.0 / n as f64 - MI_TOL && w <= 1.0 + MI_TOL)
    } else {
        (None, true)
    };
    Ok(DecompositionCheck {
        lower,
        value,
        upper,
        weight,
        n_features: n,
        holds_lower,
        holds_upper,
        weight_in_range,
    })
}
