//! Dense-tableau two-phase primal simplex with Bland's anti-cycling rule.

use serde::{Deserialize, Serialize};

use super::LpError;

const PIVOT_TOL: f64 = 1e-9;
const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub cost: f64,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize offset + c·x` subject to linear rows, `x ≥ 0` and optional
/// upper bounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearProgram {
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    pub objective_offset: f64,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, cost: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            cost,
            upper: None,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn set_upper(&mut self, var: VarId, upper: f64) {
        self.variables[var.0].upper = Some(upper);
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(VarId, f64)>, relation: Relation, rhs: f64) -> Result<(), LpError> {
        let row = self.constraints.len();
        for &(var, _) in &coeffs {
            if var.0 >= self.variables.len() {
                return Err(LpError::UnknownVariable { row, var: var.0 });
            }
        }
        self.constraints.push(Constraint { coeffs, relation, rhs });
        Ok(())
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.objective_offset
            + self
                .variables
                .iter()
                .zip(values)
                .map(|(var, x)| var.cost * x)
                .sum::<f64>()
    }

    /// Largest violation of any row or bound by `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (var, &x) in self.variables.iter().zip(values) {
            worst = worst.max(-x);
            if let Some(u) = var.upper {
                worst = worst.max(x - u);
            }
        }
        for row in &self.constraints {
            let lhs: f64 = row.coeffs.iter().map(|&(v, a)| a * values[v.0]).sum();
            let gap = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows × (cols + 1)`, last entry of each row is the rhs.
    data: Vec<f64>,
    /// Reduced costs plus negated objective value in the last slot.
    obj: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<ColumnKind>,
    iterations: usize,
    limit: usize,
}

impl Tableau {
    fn stride(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.stride() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let stride = self.stride();
        let start = pr * stride;
        let p = self.data[start + pc];
        for v in &mut self.data[start..start + stride] {
            *v /= p;
        }
        self.data[start + pc] = 1.0;
        let nz: Vec<usize> = (0..stride).filter(|&c| self.data[start + c] != 0.0).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&c| self.data[start + c]).collect();

        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let base = r * stride;
            let factor = self.data[base + pc];
            if factor == 0.0 {
                continue;
            }
            for (&c, &pv) in nz.iter().zip(&pivot_row) {
                let v = self.data[base + c] - factor * pv;
                self.data[base + c] = if v.abs() < ZERO_TOL { 0.0 } else { v };
            }
            self.data[base + pc] = 0.0;
        }
        let factor = self.obj[pc];
        if factor != 0.0 {
            for (&c, &pv) in nz.iter().zip(&pivot_row) {
                let v = self.obj[c] - factor * pv;
                self.obj[c] = if v.abs() < ZERO_TOL { 0.0 } else { v };
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.iterations += 1;
    }

    /// Runs simplex iterations on the current objective row until optimal.
    fn optimize(&mut self, allow: impl Fn(ColumnKind) -> bool) -> Result<(), LpError> {
        loop {
            if self.iterations > self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            // Bland: lowest-index improving column
            let entering = (0..self.cols).find(|&c| allow(self.kinds[c]) && self.obj[c] < -PIVOT_TOL);
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r) / a;
                best = match best {
                    None => Some((r, ratio)),
                    Some((br, bratio)) => {
                        let tie = (ratio - bratio).abs() <= ZERO_TOL * (1.0 + bratio.abs());
                        if ratio < bratio && !tie || tie && self.basis[r] < self.basis[br] {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    }
                };
            }
            let Some((pr, _)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(pr, pc);
        }
    }

    fn remove_row(&mut self, r: usize) {
        let stride = self.stride();
        self.data.drain(r * stride..(r + 1) * stride);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Solves `lp` to an optimal basic solution.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.variables.len();
    for (i, var) in lp.variables.iter().enumerate() {
        if !var.cost.is_finite() || var.upper.is_some_and(|u| !u.is_finite()) {
            return Err(LpError::NonFinite(format!("variable {i} ({})", var.name)));
        }
    }

    // dense rows over structural columns, rhs made non-negative
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for (i, con) in lp.constraints.iter().enumerate() {
        if !con.rhs.is_finite() || con.coeffs.iter().any(|(_, a)| !a.is_finite()) {
            return Err(LpError::NonFinite(format!("constraint {i}")));
        }
        let mut dense = vec![0.0; n];
        for &(v, a) in &con.coeffs {
            dense[v.0] += a;
        }
        rows.push((dense, con.relation, con.rhs));
    }
    for (i, var) in lp.variables.iter().enumerate() {
        if let Some(u) = var.upper {
            let mut dense = vec![0.0; n];
            dense[i] = 1.0;
            rows.push((dense, Relation::Le, u));
        }
    }
    for (dense, rel, rhs) in &mut rows {
        if *rhs < 0.0 {
            for a in dense.iter_mut() {
                *a = -*a;
            }
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let mut kinds = vec![ColumnKind::Structural; n];
    let mut extra: Vec<(usize, f64)> = Vec::new(); // (row, coefficient) per added column
    let mut basis = vec![usize::MAX; m];
    for (r, (_, rel, _)) in rows.iter().enumerate() {
        match rel {
            Relation::Le => {
                basis[r] = n + extra.len();
                extra.push((r, 1.0));
                kinds.push(ColumnKind::Slack);
            }
            Relation::Ge => {
                extra.push((r, -1.0));
                kinds.push(ColumnKind::Slack);
                basis[r] = n + extra.len();
                extra.push((r, 1.0));
                kinds.push(ColumnKind::Artificial);
            }
            Relation::Eq => {
                basis[r] = n + extra.len();
                extra.push((r, 1.0));
                kinds.push(ColumnKind::Artificial);
            }
        }
    }
    let cols = n + extra.len();
    let stride = cols + 1;
    let mut data = vec![0.0; m * stride];
    for (r, (dense, _, rhs)) in rows.iter().enumerate() {
        data[r * stride..r * stride + n].copy_from_slice(dense);
        data[r * stride + cols] = *rhs;
    }
    for (k, &(r, a)) in extra.iter().enumerate() {
        data[r * stride + n + k] = a;
    }

    let mut tab = Tableau {
        rows: m,
        cols,
        data,
        obj: vec![0.0; stride],
        basis,
        kinds,
        iterations: 0,
        limit: 50 * (m + cols) + 10_000,
    };

    // phase 1: minimize the sum of artificials
    let has_artificial = tab.kinds.contains(&ColumnKind::Artificial);
    if has_artificial {
        for c in 0..cols {
            if tab.kinds[c] == ColumnKind::Artificial {
                tab.obj[c] = 1.0;
            }
        }
        for r in 0..m {
            if tab.kinds[tab.basis[r]] == ColumnKind::Artificial {
                for c in 0..stride {
                    tab.obj[c] -= tab.data[r * stride + c];
                }
            }
        }
        tab.optimize(|_| true)?;
        let infeasibility = -tab.obj[cols];
        let scale = 1.0 + rows.iter().map(|(_, _, b)| b.abs()).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Err(LpError::Infeasible);
        }
        // drive remaining (zero-valued) artificials out of the basis
        let mut r = 0;
        while r < tab.rows {
            if tab.kinds[tab.basis[r]] != ColumnKind::Artificial {
                r += 1;
                continue;
            }
            let replacement =
                (0..cols).find(|&c| tab.kinds[c] != ColumnKind::Artificial && tab.at(r, c).abs() > PIVOT_TOL);
            match replacement {
                Some(c) => {
                    tab.pivot(r, c);
                    r += 1;
                }
                None => tab.remove_row(r),
            }
        }
    }

    // phase 2
    let stride = tab.stride();
    tab.obj = vec![0.0; stride];
    for (c, var) in lp.variables.iter().enumerate() {
        tab.obj[c] = var.cost;
    }
    for r in 0..tab.rows {
        let b = tab.basis[r];
        let cb = if b < n { lp.variables[b].cost } else { 0.0 };
        if cb != 0.0 {
            for c in 0..stride {
                tab.obj[c] -= cb * tab.data[r * stride + c];
            }
        }
    }
    tab.optimize(|kind| kind != ColumnKind::Artificial)?;

    let mut values = vec![0.0; n];
    for r in 0..tab.rows {
        let b = tab.basis[r];
        if b < n {
            values[b] = tab.rhs(r).max(0.0);
        }
    }
    Ok(LpSolution {
        objective: lp.evaluate(&values),
        values,
        iterations: tab.iterations,
    })
}
