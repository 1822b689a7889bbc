//! Tensor-product Gauss–Legendre rules on boxes.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// One-dimensional rule on `[0, 1]` as `(node, weight)` pairs.
#[derive(Clone, Debug)]
pub struct UnitRule {
    pub pairs: Vec<(f64, f64)>,
}

impl UnitRule {
    /// Composite Gauss–Legendre: `subcells` equal pieces with `nodes` points each.
    pub fn composite(nodes: usize, subcells: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(nodes.max(1)).unwrap());
        let base: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        let h = 1.0 / subcells.max(1) as f64;
        let mut pairs = Vec::with_capacity(base.len() * subcells.max(1));
        for c in 0..subcells.max(1) {
            let a = c as f64 * h;
            pairs.extend(base.iter().map(|&(x, w)| (a + h * x, h * w)));
        }
        Self { pairs }
    }

    /// `count + 1` equally spaced points on `[0, 1]`, endpoints included, unit weights.
    pub fn uniform_closed(count: usize) -> Self {
        let count = count.max(1);
        Self {
            pairs: (0..=count).map(|i| (i as f64 / count as f64, 1.0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Calls `visit(point, weight)` for every node of the tensor rule mapped to the
/// box `[lo, lo + width]` (one width per axis). Weights include the box volume.
pub fn for_each_tensor_node(
    rule: &UnitRule,
    lo: &[f64],
    width: &[f64],
    mut visit: impl FnMut(&[f64], f64),
) {
    let d = lo.len();
    let k = rule.len();
    if k == 0 {
        return;
    }
    let volume: f64 = width.iter().product();
    let mut counter = vec![0usize; d];
    let mut x = vec![0.0; d];
    loop {
        let mut w = volume;
        for j in 0..d {
            let (node, weight) = rule.pairs[counter[j]];
            x[j] = lo[j] + width[j] * node;
            w *= weight;
        }
        visit(&x, w);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            if counter[axis] < k {
                break;
            }
            counter[axis] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_rule_integrates_polynomials() {
        let rule = UnitRule::composite(3, 4);
        let integral: f64 = rule.pairs.iter().map(|&(x, w)| w * x.powi(5)).sum();
        assert!((integral - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn tensor_rule_volume() {
        let rule = UnitRule::composite(2, 2);
        let mut total = 0.0;
        let mut second_moment = 0.0;
        for_each_tensor_node(&rule, &[0.0, 1.0], &[2.0, 0.5], |x, w| {
            total += w;
            second_moment += w * x[0] * x[0];
        });
        assert!((total - 1.0).abs() < 1e-14);
        assert!((second_moment - 0.5 * 8.0 / 3.0).abs() < 1e-13);
    }
}
