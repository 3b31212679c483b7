/// Counts of the expensive operator applications, the cost metric used to
/// compare the outer methods. Products with `B_D`, `Q` and the projectors are
/// `O(n)` and not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpTally {
    /// Sparse products with the stiffness matrix `A`.
    pub a_apps: usize,
    /// Applications of the base `H_A` unit: one exact solve, one multigrid
    /// cycle, or one point-smoother sweep pair.
    pub ha_apps: usize,
}

impl OpTally {
    pub fn total(&self) -> usize {
        self.a_apps + self.ha_apps
    }
}
