use crate::error::{Error, Result};

use super::jet::MAX_ORDER;

/// Which pure derivatives a batched jet tensor carries.
///
/// A jet tensor stacks "planes" of shape `batch x width`: plane 0 holds
/// values, followed for each input axis by its derivatives of orders
/// `1..=orders[axis]`. Mixed partials are never formed, so one forward pass
/// over the stacked planes yields every pure derivative at once.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JetLayout {
    orders: Vec<usize>,
}

impl JetLayout {
    pub fn new(orders: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = orders.iter().find(|&&o| o > MAX_ORDER) {
            return Err(Error::config(
                "derivative order",
                format!("requested order {bad} exceeds the maximum of {MAX_ORDER}"),
            ));
        }
        Ok(JetLayout { orders })
    }

    /// Values only, no derivative planes.
    pub fn values(n_axes: usize) -> Self {
        JetLayout {
            orders: vec![0; n_axes],
        }
    }

    pub fn n_axes(&self) -> usize {
        self.orders.len()
    }

    pub fn order(&self, axis: usize) -> usize {
        self.orders.get(axis).copied().unwrap_or(0)
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn n_planes(&self) -> usize {
        1 + self.orders.iter().sum::<usize>()
    }

    /// Index of the plane holding the `order`-th derivative along `axis`;
    /// order 0 is the value plane.
    pub fn plane(&self, axis: usize, order: usize) -> Option<usize> {
        if order == 0 {
            return Some(0);
        }
        if axis >= self.orders.len() || order > self.orders[axis] {
            return None;
        }
        Some(1 + self.orders[..axis].iter().sum::<usize>() + order - 1)
    }

    /// First derivative plane of each axis with its order, skipping axes
    /// without derivatives.
    pub(crate) fn axis_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut start = 1;
        self.orders.iter().filter_map(move |&o| {
            let block = (start, o);
            start += o;
            (o > 0).then_some(block)
        })
    }

    /// Union of two layouts (max order per axis).
    pub fn merge(&self, other: &JetLayout) -> JetLayout {
        let n = self.orders.len().max(other.orders.len());
        JetLayout {
            orders: (0..n).map(|a| self.order(a).max(other.order(a))).collect(),
        }
    }
}
