//! Discrete structural causal models with back-door and front-door
//! adjustment.
//!
//! The adjusters read only the observational joint, i.e. the full joint with
//! every hidden variable summed out. [`DiscreteScm::do_oracle`] instead
//! mutilates the graph and recomputes the joint, which makes it an
//! independent ground truth for the adjustment formulas.
//!
//! Text format accepted by [`DiscreteScm::parse`]:
//!
//! ```text
//! # comment
//! [C] card=2 hidden
//! 0.5 0.5
//! [X] card=2 parents=C
//! 0.3 0.7
//! 0.8 0.2
//! ```
//!
//! One CPT row per parent configuration; configurations are enumerated with
//! the last listed parent varying fastest.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Probabilities at or below this are treated as zero when conditioning.
pub const ZERO_PROB: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CausalError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("value {value} out of range for `{var}` (cardinality {card})")]
    ValueOutOfRange { var: String, value: usize, card: usize },

    #[error("graph has a cycle through `{0}`")]
    Cyclic(String),

    #[error("CPT of `{var}`, row {row}: {reason}")]
    BadCpt { var: String, row: usize, reason: String },

    #[error("{criterion} criterion violated by path {path}")]
    CriterionViolated { criterion: &'static str, path: String },

    #[error("`{0}` is hidden and cannot be used by an adjustment formula")]
    Hidden(String),

    #[error("conditioning on zero-probability event {0}")]
    ZeroProbability(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub card: usize,
    pub parents: Vec<usize>,
    pub hidden: bool,
    /// Row-major: one row of length `card` per parent configuration.
    pub cpt: Vec<f64>,
}

/// Declarative description used to build a [`DiscreteScm`].
#[derive(Debug, Clone)]
pub struct VariableSpec {
    pub name: String,
    pub card: usize,
    pub parents: Vec<String>,
    pub hidden: bool,
    pub cpt: Vec<Vec<f64>>,
}

impl VariableSpec {
    pub fn new(name: &str, card: usize, parents: &[&str], cpt: Vec<Vec<f64>>) -> Self {
        VariableSpec {
            name: name.to_string(),
            card,
            parents: parents.iter().map(|s| s.to_string()).collect(),
            hidden: false,
            cpt,
        }
    }

    pub fn hidden(mut self) -> Self {
        self.hidden = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    vars: Vec<Variable>,
    topo: Vec<usize>,
}

/// Probability table over every variable of an SCM (index order = declaration order).
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl JointTable {
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.cards.len()];
        for i in (0..self.cards.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    /// Decodes a flat cell index into per-variable values.
    pub fn assignment(&self, mut cell: usize) -> Vec<usize> {
        let mut a = vec![0; self.cards.len()];
        for i in (0..self.cards.len()).rev() {
            a[i] = cell % self.cards[i];
            cell /= self.cards[i];
        }
        a
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of a partial assignment `(variable index, value)`.
    pub fn prob(&self, fixed: &[(usize, usize)]) -> f64 {
        let strides = self.strides();
        self.probs
            .iter()
            .enumerate()
            .filter(|(cell, _)| {
                fixed
                    .iter()
                    .all(|&(var, val)| (cell / strides[var]) % self.cards[var] == val)
            })
            .map(|(_, p)| p)
            .sum()
    }

    /// Distribution of one variable.
    pub fn marginal(&self, var: usize) -> Vec<f64> {
        let strides = self.strides();
        let mut out = vec![0.0; self.cards[var]];
        for (cell, p) in self.probs.iter().enumerate() {
            out[(cell / strides[var]) % self.cards[var]] += p;
        }
        out
    }

    /// Sums out every variable in `drop` (their cardinality becomes 1).
    pub fn sum_out(&self, drop: &[usize]) -> JointTable {
        let strides = self.strides();
        let cards: Vec<usize> = self
            .cards
            .iter()
            .enumerate()
            .map(|(i, &c)| if drop.contains(&i) { 1 } else { c })
            .collect();
        let mut out = JointTable {
            probs: vec![0.0; cards.iter().product()],
            cards,
        };
        let out_strides = out.strides();
        for (cell, p) in self.probs.iter().enumerate() {
            let mut target = 0;
            for i in 0..self.cards.len() {
                if !drop.contains(&i) {
                    target += ((cell / strides[i]) % self.cards[i]) * out_strides[i];
                }
            }
            out.probs[target] += p;
        }
        out
    }
}

impl DiscreteScm {
    pub fn new(specs: Vec<VariableSpec>) -> Result<Self, CausalError> {
        let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
        let lookup = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| CausalError::UnknownVariable(n.to_string()))
        };
        let mut vars = Vec::with_capacity(specs.len());
        for spec in &specs {
            let parents = spec
                .parents
                .iter()
                .map(|p| lookup(p))
                .collect::<Result<Vec<_>, _>>()?;
            vars.push(Variable {
                name: spec.name.clone(),
                card: spec.card,
                parents,
                hidden: spec.hidden,
                cpt: spec.cpt.iter().flatten().copied().collect(),
            });
        }
        for (i, spec) in specs.iter().enumerate() {
            if names[..i].contains(&spec.name) {
                return Err(CausalError::Parse {
                    line: 0,
                    reason: format!("duplicate variable `{}`", spec.name),
                });
            }
            if spec.card == 0 {
                return Err(CausalError::BadCpt {
                    var: spec.name.clone(),
                    row: 0,
                    reason: "cardinality must be positive".into(),
                });
            }
            let rows: usize = vars[i].parents.iter().map(|&p| vars[p].card).product();
            if spec.cpt.len() != rows {
                return Err(CausalError::BadCpt {
                    var: spec.name.clone(),
                    row: spec.cpt.len(),
                    reason: format!("expected {rows} rows"),
                });
            }
            for (r, row) in spec.cpt.iter().enumerate() {
                let bad = |reason: String| CausalError::BadCpt {
                    var: spec.name.clone(),
                    row: r,
                    reason,
                };
                if row.len() != spec.card {
                    return Err(bad(format!("expected {} entries", spec.card)));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(bad("negative or non-finite entry".into()));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(bad(format!("sums to {s}")));
                }
            }
        }
        let topo = topological_order(&vars)?;
        Ok(DiscreteScm { vars, topo })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn index_of(&self, name: &str) -> Result<usize, CausalError> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| CausalError::UnknownVariable(name.to_string()))
    }

    fn check_value(&self, var: usize, value: usize) -> Result<(), CausalError> {
        if value >= self.vars[var].card {
            return Err(CausalError::ValueOutOfRange {
                var: self.vars[var].name.clone(),
                value,
                card: self.vars[var].card,
            });
        }
        Ok(())
    }

    fn children(&self, var: usize) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&c| self.vars[c].parents.contains(&var))
            .collect()
    }

    /// Strict descendants of `var`.
    pub fn descendants(&self, var: usize) -> Vec<usize> {
        let mut seen = vec![false; self.vars.len()];
        let mut stack = self.children(var);
        while let Some(n) = stack.pop() {
            if !seen[n] {
                seen[n] = true;
                stack.extend(self.children(n));
            }
        }
        (0..self.vars.len()).filter(|&i| seen[i]).collect()
    }

    /// Product of all CPTs.
    pub fn joint(&self) -> JointTable {
        let cards: Vec<usize> = self.vars.iter().map(|v| v.card).collect();
        let n: usize = cards.iter().product();
        let mut table = JointTable {
            cards,
            probs: vec![0.0; n],
        };
        for cell in 0..n {
            let a = table.assignment(cell);
            let mut p = 1.0;
            for &i in &self.topo {
                let var = &self.vars[i];
                let mut row = 0;
                for &par in &var.parents {
                    row = row * self.vars[par].card + a[par];
                }
                p *= var.cpt[row * var.card + a[i]];
                if p == 0.0 {
                    break;
                }
            }
            table.probs[cell] = p;
        }
        table
    }

    /// Joint with hidden variables summed out.
    pub fn observational(&self) -> JointTable {
        let hidden: Vec<usize> = (0..self.vars.len()).filter(|&i| self.vars[i].hidden).collect();
        self.joint().sum_out(&hidden)
    }

    /// `P(outcome | do(var = value))`, computed on the mutilated graph.
    pub fn do_oracle(&self, var: &str, value: usize, outcome: &str) -> Result<Vec<f64>, CausalError> {
        let x = self.index_of(var)?;
        let y = self.index_of(outcome)?;
        self.check_value(x, value)?;
        let mut mutilated = self.clone();
        let v = &mut mutilated.vars[x];
        v.parents.clear();
        v.cpt = (0..v.card).map(|k| if k == value { 1.0 } else { 0.0 }).collect();
        mutilated.topo = topological_order(&mutilated.vars)?;
        Ok(mutilated.joint().marginal(y))
    }

    fn describe(&self, path: &[usize]) -> String {
        let mut s = self.vars[path[0]].name.clone();
        for w in path.windows(2) {
            let arrow = if self.vars[w[1]].parents.contains(&w[0]) {
                " -> "
            } else {
                " <- "
            };
            s.push_str(arrow);
            s.push_str(&self.vars[w[1]].name);
        }
        s
    }

    /// Simple paths between `a` and `b` in the skeleton.
    fn undirected_paths(&self, a: usize, b: usize) -> Vec<Vec<usize>> {
        fn walk(
            scm: &DiscreteScm,
            node: usize,
            target: usize,
            path: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if node == target {
                out.push(path.clone());
                return;
            }
            let mut next: Vec<usize> = scm.vars[node].parents.clone();
            next.extend(scm.children(node));
            for n in next {
                if !path.contains(&n) {
                    path.push(n);
                    walk(scm, n, target, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, a, b, &mut vec![a], &mut out);
        out
    }

    fn directed_paths(&self, a: usize, b: usize) -> Vec<Vec<usize>> {
        self.undirected_paths(a, b)
            .into_iter()
            .filter(|p| {
                p.windows(2)
                    .all(|w| self.vars[w[1]].parents.contains(&w[0]))
            })
            .collect()
    }

    /// d-separation blocking of a single path by `given`.
    fn is_blocked(&self, path: &[usize], given: &[usize]) -> bool {
        for i in 1..path.len().saturating_sub(1) {
            let node = path[i];
            let collider = self.vars[node].parents.contains(&path[i - 1])
                && self.vars[node].parents.contains(&path[i + 1]);
            if collider {
                let opened = given.contains(&node)
                    || self.descendants(node).iter().any(|d| given.contains(d));
                if !opened {
                    return true;
                }
            } else if given.contains(&node) {
                return true;
            }
        }
        false
    }

    /// Paths from `a` to `b` whose first edge points into `a`.
    fn backdoor_paths(&self, a: usize, b: usize) -> Vec<Vec<usize>> {
        self.undirected_paths(a, b)
            .into_iter()
            .filter(|p| p.len() >= 2 && self.vars[a].parents.contains(&p[1]))
            .collect()
    }

    /// Structural back-door check for `adjust` relative to (`x`, `y`).
    pub fn check_backdoor(&self, x: usize, y: usize, adjust: &[usize]) -> Result<(), CausalError> {
        let desc = self.descendants(x);
        if let Some(&z) = adjust.iter().find(|z| desc.contains(z)) {
            let path = self
                .directed_paths(x, z)
                .into_iter()
                .next()
                .unwrap_or_else(|| vec![x, z]);
            return Err(CausalError::CriterionViolated {
                criterion: "back-door",
                path: format!("{} (adjustment variable is a descendant)", self.describe(&path)),
            });
        }
        for path in self.backdoor_paths(x, y) {
            if !self.is_blocked(&path, adjust) {
                return Err(CausalError::CriterionViolated {
                    criterion: "back-door",
                    path: self.describe(&path),
                });
            }
        }
        Ok(())
    }

    /// Structural front-door check for `mediator` relative to (`x`, `y`).
    pub fn check_frontdoor(&self, x: usize, y: usize, mediator: usize) -> Result<(), CausalError> {
        let violated = |path: &[usize]| CausalError::CriterionViolated {
            criterion: "front-door",
            path: self.describe(path),
        };
        if let Some(p) = self.directed_paths(x, y).iter().find(|p| !p.contains(&mediator)) {
            return Err(violated(p));
        }
        if let Some(p) = self
            .backdoor_paths(x, mediator)
            .iter()
            .find(|p| !self.is_blocked(p, &[]))
        {
            return Err(violated(p));
        }
        if let Some(p) = self
            .backdoor_paths(mediator, y)
            .iter()
            .find(|p| !self.is_blocked(p, &[x]))
        {
            return Err(violated(p));
        }
        Ok(())
    }

    fn observed(&self, name: &str) -> Result<usize, CausalError> {
        let i = self.index_of(name)?;
        if self.vars[i].hidden {
            return Err(CausalError::Hidden(name.to_string()));
        }
        Ok(i)
    }

    fn configurations(&self, vars: &[usize]) -> Vec<Vec<(usize, usize)>> {
        let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
        for &v in vars {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..self.vars[v].card).map(move |k| {
                        let mut p = prefix.clone();
                        p.push((v, k));
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// `Σ_z P(y | x, z) P(z)` from the observational joint.
    pub fn backdoor_adjust(
        &self,
        treatment: &str,
        x: usize,
        outcome: &str,
        y: usize,
        adjust: &[&str],
    ) -> Result<f64, CausalError> {
        let xi = self.observed(treatment)?;
        let yi = self.observed(outcome)?;
        self.check_value(xi, x)?;
        self.check_value(yi, y)?;
        let zs = adjust
            .iter()
            .map(|n| self.observed(n))
            .collect::<Result<Vec<_>, _>>()?;
        self.check_backdoor(xi, yi, &zs)?;

        let obs = self.observational();
        let mut total = 0.0;
        for z in self.configurations(&zs) {
            let pz = obs.prob(&z);
            if pz <= ZERO_PROB {
                continue;
            }
            let mut xz = z.clone();
            xz.push((xi, x));
            let pxz = obs.prob(&xz);
            if pxz <= ZERO_PROB {
                return Err(CausalError::ZeroProbability(format!(
                    "{}={x} with {}",
                    treatment,
                    self.format_assignment(&z)
                )));
            }
            let mut xyz = xz;
            xyz.push((yi, y));
            total += obs.prob(&xyz) / pxz * pz;
        }
        Ok(total)
    }

    /// `Σ_m P(m | x) Σ_x' P(y | x', m) P(x')` from the observational joint.
    pub fn frontdoor_adjust(
        &self,
        treatment: &str,
        x: usize,
        outcome: &str,
        y: usize,
        mediator: &str,
    ) -> Result<f64, CausalError> {
        let xi = self.observed(treatment)?;
        let yi = self.observed(outcome)?;
        let mi = self.observed(mediator)?;
        self.check_value(xi, x)?;
        self.check_value(yi, y)?;
        self.check_frontdoor(xi, yi, mi)?;

        let obs = self.observational();
        let px = obs.prob(&[(xi, x)]);
        if px <= ZERO_PROB {
            return Err(CausalError::ZeroProbability(format!("{treatment}={x}")));
        }
        let mut total = 0.0;
        for m in 0..self.vars[mi].card {
            let pm_x = obs.prob(&[(xi, x), (mi, m)]) / px;
            if pm_x <= ZERO_PROB {
                continue;
            }
            let mut inner = 0.0;
            for xp in 0..self.vars[xi].card {
                let pxp = obs.prob(&[(xi, xp)]);
                if pxp <= ZERO_PROB {
                    continue;
                }
                let pxm = obs.prob(&[(xi, xp), (mi, m)]);
                if pxm <= ZERO_PROB {
                    return Err(CausalError::ZeroProbability(format!(
                        "{treatment}={xp}, {mediator}={m}"
                    )));
                }
                inner += obs.prob(&[(xi, xp), (mi, m), (yi, y)]) / pxm * pxp;
            }
            total += pm_x * inner;
        }
        Ok(total)
    }

    fn format_assignment(&self, a: &[(usize, usize)]) -> String {
        a.iter()
            .map(|&(v, k)| format!("{}={k}", self.vars[v].name))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn parse(text: &str) -> Result<Self, CausalError> {
        let mut specs: Vec<VariableSpec> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |reason: String| CausalError::Parse {
                line: line_no,
                reason,
            };
            if let Some(rest) = line.strip_prefix('[') {
                let (name, attrs) = rest
                    .split_once(']')
                    .ok_or_else(|| perr("missing `]`".into()))?;
                let mut spec = VariableSpec {
                    name: name.trim().to_string(),
                    card: 0,
                    parents: Vec::new(),
                    hidden: false,
                    cpt: Vec::new(),
                };
                for attr in attrs.split_whitespace() {
                    if attr == "hidden" {
                        spec.hidden = true;
                    } else if let Some(c) = attr.strip_prefix("card=") {
                        spec.card = c.parse().map_err(|_| perr(format!("bad cardinality `{c}`")))?;
                    } else if let Some(p) = attr.strip_prefix("parents=") {
                        spec.parents = p.split(',').map(|s| s.trim().to_string()).collect();
                    } else {
                        return Err(perr(format!("unknown attribute `{attr}`")));
                    }
                }
                if spec.card == 0 {
                    return Err(perr("missing card=".into()));
                }
                specs.push(spec);
            } else {
                let spec = specs
                    .last_mut()
                    .ok_or_else(|| perr("CPT row before any variable header".into()))?;
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| perr(format!("bad probability `{t}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                spec.cpt.push(row);
            }
        }
        DiscreteScm::new(specs)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DiscreteScm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.vars {
            write!(f, "[{}] card={}", v.name, v.card)?;
            if !v.parents.is_empty() {
                let names: Vec<&str> = v.parents.iter().map(|&p| self.vars[p].name.as_str()).collect();
                write!(f, " parents={}", names.join(","))?;
            }
            if v.hidden {
                write!(f, " hidden")?;
            }
            writeln!(f)?;
            for row in v.cpt.chunks(v.card) {
                let cells: Vec<String> = row.iter().map(|p| format!("{p:?}")).collect();
                writeln!(f, "{}", cells.join(" "))?;
            }
        }
        Ok(())
    }
}

fn topological_order(vars: &[Variable]) -> Result<Vec<usize>, CausalError> {
    let n = vars.len();
    let mut indeg: Vec<usize> = vars.iter().map(|v| v.parents.len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for (c, v) in vars.iter().enumerate() {
            for &p in &v.parents {
                if p == i {
                    indeg[c] -= 1;
                    if indeg[c] == 0 {
                        ready.push(c);
                    }
                }
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|i| !order.contains(i)).unwrap_or(0);
        return Err(CausalError::Cyclic(vars[stuck].name.clone()));
    }
    Ok(order)
}

fn random_binary_row<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let p = rng.random_range(0.05..0.95);
    vec![p, 1.0 - p]
}

/// Binary SCM with confounder `C` (into `X` and `Y`) and mediator chain
/// `X -> M -> Y`; `hide_confounder` selects between the observed-C and
/// hidden-C variants of the graph.
pub fn random_binary_mediated<R: Rng + ?Sized>(rng: &mut R, hide_confounder: bool) -> DiscreteScm {
    let mut c = VariableSpec::new("C", 2, &[], vec![random_binary_row(rng)]);
    if hide_confounder {
        c = c.hidden();
    }
    let x = VariableSpec::new("X", 2, &["C"], (0..2).map(|_| random_binary_row(rng)).collect());
    let m = VariableSpec::new("M", 2, &["X"], (0..2).map(|_| random_binary_row(rng)).collect());
    let y = VariableSpec::new("Y", 2, &["C", "M"], (0..4).map(|_| random_binary_row(rng)).collect());
    DiscreteScm::new(vec![c, x, m, y]).expect("well-formed random SCM")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn uniform_row(k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }

    fn uniform_chain() -> DiscreteScm {
        DiscreteScm::new(vec![
            VariableSpec::new("C", 2, &[], vec![uniform_row(2)]),
            VariableSpec::new("X", 2, &["C"], vec![uniform_row(2); 2]),
            VariableSpec::new("M", 2, &["X"], vec![uniform_row(2); 2]),
            VariableSpec::new("Y", 2, &["C", "M"], vec![uniform_row(2); 4]),
        ])
        .unwrap()
    }

    #[test]
    fn uniform_joint_cells() {
        let j = uniform_chain().joint();
        assert_eq!(j.probs.len(), 16);
        assert!(j.probs.iter().all(|&p| p == 1.0 / 16.0));
    }

    #[test]
    fn deterministic_chain_support() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("C", 2, &[], vec![vec![0.5, 0.5]]),
            VariableSpec::new("X", 2, &["C"], id.clone()),
            VariableSpec::new("M", 2, &["X"], id.clone()),
            VariableSpec::new("Y", 2, &["M"], id),
        ])
        .unwrap();
        let j = scm.joint();
        let support: Vec<Vec<usize>> = (0..16)
            .filter(|&c| j.probs[c] > 0.0)
            .map(|c| j.assignment(c))
            .collect();
        assert_eq!(support, vec![vec![0, 0, 0, 0], vec![1, 1, 1, 1]]);
    }

    #[test]
    fn random_joint_sums_to_one() {
        for s in 0..20 {
            let scm = random_binary_mediated(&mut substream(s, "scm", 0), true);
            assert!((scm.joint().total() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_cpt_and_cycles_rejected() {
        let err = DiscreteScm::new(vec![VariableSpec::new("A", 2, &[], vec![vec![0.5, 0.6]])]);
        assert!(matches!(err, Err(CausalError::BadCpt { .. })));
        let err = DiscreteScm::new(vec![
            VariableSpec::new("A", 2, &["B"], vec![uniform_row(2); 2]),
            VariableSpec::new("B", 2, &["A"], vec![uniform_row(2); 2]),
        ]);
        assert!(matches!(err, Err(CausalError::Cyclic(_))));
    }

    #[test]
    fn do_on_unconfounded_root_equals_conditioning() {
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("X", 2, &[], vec![vec![0.3, 0.7]]),
            VariableSpec::new("Y", 2, &["X"], vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
        ])
        .unwrap();
        let j = scm.joint();
        for x in 0..2 {
            let d = scm.do_oracle("X", x, "Y").unwrap();
            let cond = j.prob(&[(0, x), (1, 1)]) / j.prob(&[(0, x)]);
            assert!((d[1] - cond).abs() < 1e-15);
        }
    }

    #[test]
    fn do_on_irrelevant_variable_gives_marginal() {
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("X", 2, &[], vec![vec![0.4, 0.6]]),
            VariableSpec::new("Y", 3, &[], vec![vec![0.2, 0.3, 0.5]]),
        ])
        .unwrap();
        assert_eq!(scm.do_oracle("X", 1, "Y").unwrap(), vec![0.2, 0.3, 0.5]);
        assert!(matches!(
            scm.do_oracle("X", 2, "Y"),
            Err(CausalError::ValueOutOfRange { .. })
        ));
        assert!(matches!(
            scm.do_oracle("Q", 0, "Y"),
            Err(CausalError::UnknownVariable(_))
        ));
    }

    #[test]
    fn frontdoor_matches_oracle_on_hidden_confounder() {
        for s in 0..50 {
            let scm = random_binary_mediated(&mut substream(s, "fd", 0), true);
            for x in 0..2 {
                let truth = scm.do_oracle("X", x, "Y").unwrap();
                for y in 0..2 {
                    let fd = scm.frontdoor_adjust("X", x, "Y", y, "M").unwrap();
                    assert!((fd - truth[y]).abs() < 1e-10, "seed {s}");
                }
            }
        }
    }

    #[test]
    fn backdoor_matches_oracle_on_observed_confounder() {
        let scm = random_binary_mediated(&mut substream(3, "bd", 0), false);
        for x in 0..2 {
            let truth = scm.do_oracle("X", x, "Y").unwrap();
            for y in 0..2 {
                let bd = scm.backdoor_adjust("X", x, "Y", y, &["C"]).unwrap();
                assert!((bd - truth[y]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backdoor_empty_set_without_confounding_is_conditional() {
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("X", 2, &[], vec![vec![0.35, 0.65]]),
            VariableSpec::new("Y", 2, &["X"], vec![vec![0.6, 0.4], vec![0.1, 0.9]]),
        ])
        .unwrap();
        let bd = scm.backdoor_adjust("X", 1, "Y", 1, &[]).unwrap();
        assert!((bd - 0.9).abs() < 1e-15);
    }

    #[test]
    fn uniform_scm_backdoor_is_half() {
        let scm = uniform_chain();
        assert!((scm.backdoor_adjust("X", 0, "Y", 1, &["C"]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn criterion_violations_name_the_path() {
        let scm = random_binary_mediated(&mut substream(1, "v", 0), false);
        match scm.backdoor_adjust("X", 0, "Y", 0, &[]) {
            Err(CausalError::CriterionViolated { path, .. }) => assert_eq!(path, "X <- C -> Y"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            scm.backdoor_adjust("X", 0, "Y", 0, &["M"]),
            Err(CausalError::CriterionViolated { .. })
        ));
        // Y is not a valid mediator for (X, M): X -> M bypasses it.
        assert!(matches!(
            scm.frontdoor_adjust("X", 0, "M", 0, "C"),
            Err(CausalError::CriterionViolated { .. })
        ));
        let hidden = random_binary_mediated(&mut substream(1, "v", 0), true);
        assert_eq!(
            hidden.backdoor_adjust("X", 0, "Y", 0, &["C"]),
            Err(CausalError::Hidden("C".into()))
        );
    }

    #[test]
    fn frontdoor_reduces_to_backdoor_without_confounding() {
        // X -> M -> Y with M a noisy copy of X and no confounder.
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("X", 2, &[], vec![vec![0.45, 0.55]]),
            VariableSpec::new("M", 2, &["X"], vec![vec![0.9, 0.1], vec![0.1, 0.9]]),
            VariableSpec::new("Y", 2, &["M"], vec![vec![0.7, 0.3], vec![0.25, 0.75]]),
        ])
        .unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let fd = scm.frontdoor_adjust("X", x, "Y", y, "M").unwrap();
                let bd = scm.backdoor_adjust("X", x, "Y", y, &[]).unwrap();
                assert!((fd - bd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_mediator_hits_zero_probability() {
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("X", 2, &[], vec![vec![0.45, 0.55]]),
            VariableSpec::new("M", 2, &["X"], vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            VariableSpec::new("Y", 2, &["M"], vec![vec![0.7, 0.3], vec![0.25, 0.75]]),
        ])
        .unwrap();
        assert!(matches!(
            scm.frontdoor_adjust("X", 0, "Y", 1, "M"),
            Err(CausalError::ZeroProbability(_))
        ));
    }

    #[test]
    fn frontdoor_with_independent_mediator_returns_marginal() {
        // Y depends on C only, so the front-door sum collapses to P(y).
        let scm = DiscreteScm::new(vec![
            VariableSpec::new("X", 2, &[], vec![vec![0.3, 0.7]]),
            VariableSpec::new("M", 2, &["X"], vec![vec![0.8, 0.2], vec![0.35, 0.65]]),
            VariableSpec::new("Y", 2, &["M"], vec![vec![0.6, 0.4], vec![0.6, 0.4]]),
        ])
        .unwrap();
        let fd = scm.frontdoor_adjust("X", 1, "Y", 1, "M").unwrap();
        assert!((fd - 0.4).abs() < 1e-15);
    }

    #[test]
    fn text_round_trip() {
        let scm = random_binary_mediated(&mut substream(9, "txt", 0), true);
        let back = DiscreteScm::parse(&scm.to_text()).unwrap();
        assert_eq!(scm, back);
        let err = DiscreteScm::parse("[A] card=2\n0.5 x\n").unwrap_err();
        assert!(matches!(err, CausalError::Parse { line: 2, .. }));
    }
}
