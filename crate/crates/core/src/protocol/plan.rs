use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mech::Budget;

/// Assignment of users to budget groups.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupPlan {
    total: Budget,
    budgets: Vec<Budget>,
    reports_per_user: Vec<usize>,
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl GroupPlan {
    pub fn h(&self) -> usize {
        self.budgets.len()
    }

    pub fn total_budget(&self) -> Budget {
        self.total
    }

    /// `budgets[t] = ε / 2^t`.
    pub fn budgets(&self) -> &[Budget] {
        &self.budgets
    }

    pub fn reports_per_user(&self) -> &[usize] {
        &self.reports_per_user
    }

    /// Group of each user.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Reports group `t` receives: its users times their repetitions.
    pub fn reports_in(&self, t: usize) -> usize {
        self.sizes[t] * self.reports_per_user[t]
    }

    pub fn members(&self, t: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == t)
            .map(|(u, _)| u)
            .collect()
    }
}

/// Split `n` users into `h = ⌈log₂(ε/ε₀)⌉ + 1` equal groups with halving
/// budgets. Users in group `t` report `2^t` times at `ε/2^t`. Leftover users
/// go to the largest-budget groups.
pub fn dap_plan<R: Rng + ?Sized>(
    n: usize,
    eps: Budget,
    eps0: Budget,
    rng: &mut R,
) -> Result<GroupPlan> {
    if n == 0 {
        return Err(Error::Empty("population"));
    }
    let ratio = eps.epsilon() / eps0.epsilon();
    if ratio < 1.0 - 1e-12 {
        return Err(Error::Config(format!(
            "eps0 = {} exceeds eps = {}",
            eps0.epsilon(),
            eps.epsilon()
        )));
    }
    let log = ratio.max(1.0).log2();
    let steps = if (log - log.round()).abs() < 1e-9 {
        log.round()
    } else {
        log.ceil()
    } as usize;
    let h = steps + 1;
    if h > 40 {
        return Err(Error::Config(format!("{h} groups is too many")));
    }

    let budgets = (0..h)
        .map(|t| Budget::new(eps.epsilon() / (1u64 << t) as f64))
        .collect::<Result<Vec<_>>>()?;
    let reports_per_user = (0..h).map(|t| 1usize << t).collect();
    let sizes: Vec<usize> = (0..h).map(|t| n / h + usize::from(t < n % h)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut assignment = vec![0; n];
    let mut next = order.into_iter();
    for (t, &size) in sizes.iter().enumerate() {
        for user in next.by_ref().take(size) {
            assignment[user] = t;
        }
    }

    Ok(GroupPlan {
        total: eps,
        budgets,
        reports_per_user,
        assignment,
        sizes,
    })
}
