//! Measurement designs: sparse descriptions of an orthonormal `M x N` matrix
//! `A` built from small interferometer code blocks, plus an optional
//! non-negative reference vector.
//!
//! Each group routes `L` modes through a `Q x L` code block, producing `Q`
//! consecutive measurement rows. Row `q` of group `g` has
//! `A[m, members[l]] = code[q, l] * column_scale[members[l]]`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Largest `M * N` that `materialize_rows` will hold densely.
pub const DENSE_LIMIT: usize = 1 << 24;

const CONNECT_RETRIES: u64 = 32;

/// `Q x L` complex code block, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    q_rows: usize,
    l_cols: usize,
    entries: Vec<Complex64>,
}

impl CodeBlock {
    pub fn from_entries(q_rows: usize, l_cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if q_rows == 0 || l_cols == 0 || entries.len() != q_rows * l_cols {
            return invalid("code block shape does not match its entries");
        }
        Ok(Self {
            q_rows,
            l_cols,
            entries,
        })
    }

    pub fn q_rows(&self) -> usize {
        self.q_rows
    }

    pub fn l_cols(&self) -> usize {
        self.l_cols
    }

    #[inline]
    pub fn get(&self, q: usize, l: usize) -> Complex64 {
        self.entries[q * self.l_cols + l]
    }

    /// `max |W^H W - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.l_cols {
            for b in 0..self.l_cols {
                let g: Complex64 = (0..self.q_rows)
                    .map(|q| self.get(q, a).conj() * self.get(q, b))
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }
}

/// DFT code block, `W[q, l] = exp(j 2 pi q l / Q) / sqrt(Q)`.
pub fn dft_code(q_rows: usize, l_cols: usize) -> Result<CodeBlock> {
    if l_cols == 0 || q_rows == 0 {
        return invalid("Q and L must be positive");
    }
    if l_cols > q_rows {
        return invalid(format!(
            "L = {l_cols} > Q = {q_rows}: columns cannot be orthonormal"
        ));
    }
    let norm = 1.0 / (q_rows as f64).sqrt();
    let mut entries = Vec::with_capacity(q_rows * l_cols);
    for q in 0..q_rows {
        for l in 0..l_cols {
            // Reduce q*l mod Q first so large indices stay exact.
            let k = (q * l) % q_rows;
            let theta = 2.0 * PI * k as f64 / q_rows as f64;
            entries.push(Complex64::from_polar(norm, theta));
        }
    }
    CodeBlock::from_entries(q_rows, l_cols, entries)
}

/// Phase-quadrature column `(1, j, -1, -j) / 2`.
pub fn quadrature_code() -> CodeBlock {
    let h = 0.5;
    CodeBlock::from_entries(
        4,
        1,
        vec![
            Complex64::new(h, 0.0),
            Complex64::new(0.0, h),
            Complex64::new(-h, 0.0),
            Complex64::new(0.0, -h),
        ],
    )
    .expect("fixed shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Groups of `L` modes through a `Q x L` DFT code.
    Group,
    /// One mode per group through the quadrature column, with a reference.
    Holographic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignFile", into = "DesignFile")]
pub struct MeasurementDesign {
    kind: DesignKind,
    n_modes: usize,
    seed: Option<u64>,
    code: CodeBlock,
    groups: Vec<Vec<usize>>,
    column_scale: Vec<f64>,
    reference: Option<Vec<f64>>,
}

impl MeasurementDesign {
    /// Builds a design from explicit groups and normalizes its columns.
    pub fn from_groups(
        n_modes: usize,
        code: CodeBlock,
        groups: Vec<Vec<usize>>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let design = Self {
            kind: DesignKind::Group,
            n_modes,
            seed,
            column_scale: vec![1.0; n_modes],
            code,
            groups,
            reference: None,
        };
        design.validate_structure()?;
        normalize_columns(design)
    }

    fn validate_structure(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::InvalidDesign("design has no modes".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::InvalidDesign("design has no groups".into()));
        }
        let l = self.code.l_cols();
        for (g, members) in self.groups.iter().enumerate() {
            if members.len() != l {
                return Err(Error::InvalidDesign(format!(
                    "group {g} has {} members, code expects {l}",
                    members.len()
                )));
            }
            for (i, &m) in members.iter().enumerate() {
                if m >= self.n_modes {
                    return Err(Error::InvalidDesign(format!(
                        "group {g} references mode {m} outside [0, {})",
                        self.n_modes
                    )));
                }
                if members[..i].contains(&m) {
                    return Err(Error::InvalidDesign(format!(
                        "group {g} repeats mode {m}"
                    )));
                }
            }
        }
        if self.column_scale.len() != self.n_modes {
            return Err(Error::InvalidDesign("column_scale length mismatch".into()));
        }
        if let Some(r) = &self.reference {
            if r.len() != self.m_rows() {
                return Err(Error::InvalidDesign("reference length mismatch".into()));
            }
            if r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidDesign(
                    "reference must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Attaches a per-row reference amplitude vector.
    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        self.reference = Some(reference);
        self.validate_structure()?;
        Ok(self)
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn m_rows(&self) -> usize {
        self.groups.len() * self.code.q_rows()
    }

    pub fn group_size(&self) -> usize {
        self.code.l_cols()
    }

    pub fn outputs_per_group(&self) -> usize {
        self.code.q_rows()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn code(&self) -> &CodeBlock {
        &self.code
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn column_scale(&self) -> &[f64] {
        &self.column_scale
    }

    pub fn reference(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    #[inline]
    pub fn reference_at(&self, row: usize) -> f64 {
        self.reference.as_ref().map_or(0.0, |r| r[row])
    }

    /// Number of groups containing each mode.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_modes];
        for g in &self.groups {
            for &m in g {
                deg[m] += 1;
            }
        }
        deg
    }

    /// Matrix entry for row `q` of a group, column `l` of the code.
    #[inline]
    pub fn entry(&self, q: usize, l: usize, mode: usize) -> Complex64 {
        self.code.get(q, l) * self.column_scale[mode]
    }

    /// `y = rho + A x`, evaluated group by group.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.n_modes);
        let qn = self.code.q_rows();
        let mut y = Vec::with_capacity(self.m_rows());
        let mut scaled = vec![Complex64::new(0.0, 0.0); self.code.l_cols()];
        for members in &self.groups {
            for (s, &m) in scaled.iter_mut().zip(members) {
                *s = x[m] * self.column_scale[m];
            }
            for q in 0..qn {
                let mut acc = Complex64::new(0.0, 0.0);
                for (l, s) in scaled.iter().enumerate() {
                    acc += self.code.get(q, l) * s;
                }
                y.push(acc);
            }
        }
        if let Some(r) = &self.reference {
            for (v, rho) in y.iter_mut().zip(r) {
                v.re += rho;
            }
        }
        y
    }

    /// `A^H v`.
    pub fn apply_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.m_rows());
        let qn = self.code.q_rows();
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_modes];
        for (g, members) in self.groups.iter().enumerate() {
            let rows = &v[g * qn..(g + 1) * qn];
            for (l, &m) in members.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (q, r) in rows.iter().enumerate() {
                    acc += self.code.get(q, l).conj() * r;
                }
                out[m] += acc * self.column_scale[m];
            }
        }
        out
    }

    /// True iff the hypergraph of group member sets is one component
    /// spanning every mode.
    pub fn is_connected(&self) -> bool {
        components(self.n_modes, &self.groups).len() == 1
    }

    /// Dense `A` (rows `a_m^H`). Intended for oracle checks on small designs.
    pub fn materialize_rows(&self) -> Result<DMatrix<Complex64>> {
        if self.groups.is_empty() {
            return Err(Error::InvalidDesign("empty design".into()));
        }
        let size = self.m_rows() * self.n_modes;
        if size > DENSE_LIMIT {
            return Err(Error::SizeGuard {
                what: "dense measurement matrix",
                size,
                limit: DENSE_LIMIT,
            });
        }
        let qn = self.code.q_rows();
        let mut a = DMatrix::from_element(self.m_rows(), self.n_modes, Complex64::new(0.0, 0.0));
        for (g, members) in self.groups.iter().enumerate() {
            for q in 0..qn {
                for (l, &m) in members.iter().enumerate() {
                    a[(g * qn + q, m)] += self.entry(q, l, m);
                }
            }
        }
        Ok(a)
    }

    /// `max |A^H A - I|`, computed sparsely from group co-occurrences.
    pub fn orthonormality_error(&self) -> f64 {
        use std::collections::HashMap;
        let qn = self.code.q_rows();
        let mut gram: HashMap<(usize, usize), Complex64> = HashMap::new();
        for members in &self.groups {
            for (la, &ma) in members.iter().enumerate() {
                for (lb, &mb) in members.iter().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for q in 0..qn {
                        acc += self.entry(q, la, ma).conj() * self.entry(q, lb, mb);
                    }
                    *gram.entry((ma, mb)).or_default() += acc;
                }
            }
        }
        let mut worst = 0.0f64;
        for m in 0..self.n_modes {
            let d = gram.get(&(m, m)).copied().unwrap_or_default();
            worst = worst.max((d - 1.0).norm());
        }
        for (&(a, b), v) in &gram {
            if a != b {
                worst = worst.max(v.norm());
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DesignFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DesignFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// Connected components of the mode hypergraph, each sorted, ordered by
/// smallest member.
fn components(n: usize, groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for g in groups {
        if let Some((&first, rest)) = g.split_first() {
            for &m in rest {
                let a = find(&mut parent, first);
                let b = find(&mut parent, m);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut index_of_root = vec![usize::MAX; n];
    for m in 0..n {
        let r = find(&mut parent, m);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[index_of_root[r]].push(m);
    }
    comps
}

/// Sets `column_scale[n] = 1 / sqrt(deg_n)`; with unit-norm code columns this
/// makes `A^H A = I` whenever codes within a group are orthonormal.
pub fn normalize_columns(mut design: MeasurementDesign) -> Result<MeasurementDesign> {
    let deg = design.degrees();
    if let Some(m) = deg.iter().position(|&d| d == 0) {
        return Err(Error::InvalidDesign(format!("mode {m} is not measured")));
    }
    design.column_scale = deg.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    Ok(design)
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Number of groups for a random design: `n ceil(log2 n)` pairs for `L = 2`,
/// `ceil(n log2 n)` groups otherwise.
pub fn group_count(n: usize, l: usize) -> usize {
    if l == 2 {
        n * ceil_log2(n)
    } else {
        ((n as f64) * (n as f64).log2()).ceil().max(1.0) as usize
    }
}

/// Random near-regular design of `L`-mode groups measured through a `Q x L`
/// DFT code.
pub fn random_group_design(n: usize, l: usize, q: usize, seed: u64) -> Result<MeasurementDesign> {
    if l < 2 {
        return invalid("group size L must be at least 2");
    }
    if n < l {
        return invalid(format!("need n >= L, got n = {n}, L = {l}"));
    }
    if q < l {
        return invalid(format!("need Q >= L, got Q = {q}, L = {l}"));
    }
    let code = dft_code(q, l)?;
    let n_groups = group_count(n, l);

    let mut fallback = None;
    for attempt in 0..CONNECT_RETRIES {
        let mut rng = seed::rng(seed::derive(seed, attempt));
        let Some(groups) = sample_groups(n, l, n_groups, &mut rng) else {
            continue;
        };
        if components(n, &groups).len() == 1 {
            return MeasurementDesign::from_groups(n, code, groups, Some(seed));
        }
        if fallback.is_none() {
            fallback = Some((groups, rng));
        }
    }
    let Some((mut groups, mut rng)) = fallback else {
        return Err(Error::ConstructionFailure(format!(
            "could not draw duplicate-free groups for n = {n}, L = {l}"
        )));
    };
    bridge_components(n, l, &mut groups, &mut rng);
    let design = MeasurementDesign::from_groups(n, code, groups, Some(seed))?;
    if !design.is_connected() {
        return Err(Error::ConstructionFailure("bridging left the design disconnected".into()));
    }
    Ok(design)
}

/// Balanced slot assignment: each mode gets `floor` or `ceil` of
/// `n_groups * L / n` slots; slots are shuffled into groups and duplicate
/// members are repaired by swaps between groups.
fn sample_groups(
    n: usize,
    l: usize,
    n_groups: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    let total = n_groups * l;
    let base = total / n;
    let extra = total % n;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut slots = Vec::with_capacity(total);
    for (rank, &m) in order.iter().enumerate() {
        let count = base + usize::from(rank < extra);
        slots.extend(std::iter::repeat_n(m, count));
    }
    slots.shuffle(rng);
    let mut groups: Vec<Vec<usize>> = slots.chunks(l).map(<[usize]>::to_vec).collect();

    let max_tries = 64 * total + 1024;
    let mut tries = 0usize;
    loop {
        let bad = groups.iter().position(|g| first_duplicate(g).is_some());
        let Some(g) = bad else { break };
        let p = first_duplicate(&groups[g]).expect("checked");
        let u = groups[g][p];
        let mut fixed = false;
        while tries < max_tries {
            tries += 1;
            let h = rng.random_range(0..groups.len());
            if h == g {
                continue;
            }
            let r = rng.random_range(0..l);
            let v = groups[h][r];
            let v_fits = !groups[g]
                .iter()
                .enumerate()
                .any(|(i, &w)| i != p && w == v);
            let u_fits = !groups[h]
                .iter()
                .enumerate()
                .any(|(i, &w)| i != r && w == u);
            if v_fits && u_fits {
                groups[g][p] = v;
                groups[h][r] = u;
                fixed = true;
                break;
            }
        }
        if !fixed {
            return None;
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Some(groups)
}

fn first_duplicate(g: &[usize]) -> Option<usize> {
    (1..g.len()).find(|&i| g[..i].contains(&g[i]))
}

/// Appends one group per adjacent component pair, each holding a mode from
/// both components plus random fillers.
fn bridge_components(n: usize, l: usize, groups: &mut Vec<Vec<usize>>, rng: &mut ChaCha8Rng) {
    let comps = components(n, groups);
    for pair in comps.windows(2) {
        let a = pair[0][rng.random_range(0..pair[0].len())];
        let b = pair[1][rng.random_range(0..pair[1].len())];
        let mut members = vec![a, b];
        while members.len() < l {
            let m = rng.random_range(0..n);
            if !members.contains(&m) {
                members.push(m);
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
}

/// Phase-quadrature holography: each mode measured alone at four reference
/// phase offsets with reference amplitude `rho` on every row.
pub fn holographic_design(n: usize, rho: f64) -> Result<MeasurementDesign> {
    if n == 0 {
        return invalid("n must be positive");
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return invalid("reference amplitude must be finite and non-negative");
    }
    let design = MeasurementDesign {
        kind: DesignKind::Holographic,
        n_modes: n,
        seed: None,
        code: quadrature_code(),
        groups: (0..n).map(|m| vec![m]).collect(),
        column_scale: vec![1.0; n],
        reference: Some(vec![rho; 4 * n]),
    };
    design.validate_structure()?;
    Ok(design)
}

/// On-disk design schema, field order fixed.
#[derive(Clone, Serialize, Deserialize)]
struct DesignFile {
    kind: DesignKind,
    n: usize,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "Q")]
    q: usize,
    seed: Option<u64>,
    groups: Vec<Vec<usize>>,
    column_scale: Vec<f64>,
    reference: Option<Vec<f64>>,
}

impl From<&MeasurementDesign> for DesignFile {
    fn from(d: &MeasurementDesign) -> Self {
        Self {
            kind: d.kind,
            n: d.n_modes,
            l: d.code.l_cols(),
            q: d.code.q_rows(),
            seed: d.seed,
            groups: d.groups.clone(),
            column_scale: d.column_scale.clone(),
            reference: d.reference.clone(),
        }
    }
}

impl From<MeasurementDesign> for DesignFile {
    fn from(d: MeasurementDesign) -> Self {
        Self::from(&d)
    }
}

impl TryFrom<DesignFile> for MeasurementDesign {
    type Error = Error;

    fn try_from(f: DesignFile) -> Result<Self> {
        let code = match f.kind {
            DesignKind::Group => dft_code(f.q, f.l)?,
            DesignKind::Holographic => {
                if f.q != 4 || f.l != 1 {
                    return Err(Error::InvalidDesign("holographic designs use Q = 4, L = 1".into()));
                }
                quadrature_code()
            }
        };
        if f.column_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidDesign("column scales must be positive".into()));
        }
        let design = MeasurementDesign {
            kind: f.kind,
            n_modes: f.n,
            seed: f.seed,
            code,
            groups: f.groups,
            column_scale: f.column_scale,
            reference: f.reference,
        };
        design.validate_structure()?;
        Ok(design)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_gram_error(d: &MeasurementDesign) -> f64 {
        let a = d.materialize_rows().unwrap();
        let g = a.adjoint() * &a;
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let t = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - t).norm());
            }
        }
        worst
    }

    #[test]
    fn dft_code_examples() {
        let w = dft_code(1, 1).unwrap();
        assert_eq!(w.get(0, 0), Complex64::new(1.0, 0.0));

        let w = dft_code(4, 2).unwrap();
        for q in 0..4 {
            let expected = Complex64::from_polar(0.5, PI * q as f64 / 2.0);
            assert!((w.get(q, 1) - expected).norm() < 1e-15);
            assert!((w.get(q, 0) - 0.5).norm() < 1e-15);
        }
        assert!(w.orthonormality_error() < 1e-12);
        assert!(dft_code(3, 3).unwrap().orthonormality_error() < 1e-12);
        assert!(dft_code(7, 5).unwrap().orthonormality_error() < 1e-12);
        assert!(dft_code(2, 3).is_err());
        assert!(dft_code(3, 0).is_err());
    }

    #[test]
    fn connectivity_examples() {
        let code = dft_code(3, 2).unwrap();
        let path = MeasurementDesign::from_groups(
            4,
            code.clone(),
            vec![vec![0, 1], vec![1, 2], vec![2, 3]],
            None,
        )
        .unwrap();
        assert!(path.is_connected());
        let split =
            MeasurementDesign::from_groups(4, code, vec![vec![0, 1], vec![2, 3]], None).unwrap();
        assert!(!split.is_connected());
    }

    #[test]
    fn random_design_counts() {
        let d = random_group_design(4, 2, 3, 11).unwrap();
        assert_eq!(d.groups().len(), 8);
        assert_eq!(d.m_rows(), 24);
        assert!(d.degrees().iter().all(|&k| k == 4));
        assert!(d.is_connected());

        let d = random_group_design(8, 3, 3, 11).unwrap();
        assert_eq!(d.groups().len(), 24);
        assert_eq!(d.m_rows(), 72);

        let d = random_group_design(2, 2, 3, 11).unwrap();
        assert_eq!(d.groups(), &[vec![0, 1], vec![0, 1]]);
        assert!(dense_gram_error(&d) < 1e-12);
    }

    #[test]
    fn random_design_near_regular() {
        for (n, l) in [(64, 3), (100, 4), (256, 5), (37, 2)] {
            let d = random_group_design(n, l, l.max(3), 5).unwrap();
            let deg = d.degrees();
            let target = (d.groups().len() * l) as f64 / n as f64;
            // Bridging may add at most a handful of extra memberships.
            for &k in &deg {
                assert!((k as f64 - target).abs() <= 2.0, "n={n} L={l} deg {k} target {target}");
            }
            assert!(d.is_connected());
            for g in d.groups() {
                assert!(first_duplicate(g).is_none());
            }
        }
    }

    #[test]
    fn random_design_errors() {
        assert!(random_group_design(4, 1, 3, 0).is_err());
        assert!(random_group_design(3, 4, 4, 0).is_err());
        assert!(random_group_design(8, 3, 2, 0).is_err());
    }

    #[test]
    fn random_design_deterministic_json() {
        let a = random_group_design(32, 3, 3, 42).unwrap().to_json().unwrap();
        let b = random_group_design(32, 3, 3, 42).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = random_group_design(32, 3, 3, 43).unwrap().to_json().unwrap();
        assert_ne!(a, c);
        let back = MeasurementDesign::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn json_field_order() {
        let s = holographic_design(1, 2.0).unwrap().to_json().unwrap();
        assert!(s.starts_with(r#"{"kind":"holographic","n":1,"L":1,"Q":4,"seed":null,"groups":[[0]]"#));
    }

    #[test]
    fn normalize_examples() {
        let code = dft_code(2, 2).unwrap();
        let d = MeasurementDesign::from_groups(2, code, vec![vec![0, 1]], None).unwrap();
        assert_eq!(d.column_scale(), &[1.0, 1.0]);
        assert!(dense_gram_error(&d) < 1e-12);

        let d = random_group_design(16, 2, 3, 3).unwrap();
        for (s, k) in d.column_scale().iter().zip(d.degrees()) {
            assert!((s - 1.0 / (k as f64).sqrt()).abs() < 1e-15);
        }
        assert!(dense_gram_error(&d) < 1e-10);

        let code = dft_code(3, 2).unwrap();
        let isolated = MeasurementDesign::from_groups(3, code, vec![vec![0, 1]], None);
        assert!(matches!(isolated, Err(Error::InvalidDesign(_))));
    }

    #[test]
    fn entry_magnitudes() {
        let d = random_group_design(20, 4, 4, 8).unwrap();
        let q = d.outputs_per_group();
        for g in d.groups() {
            for qq in 0..q {
                for (l, &m) in g.iter().enumerate() {
                    let expected = d.column_scale()[m] / (q as f64).sqrt();
                    assert!((d.entry(qq, l, m).norm() - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn holographic_structure() {
        let d = holographic_design(1, 3.0).unwrap();
        let a = d.materialize_rows().unwrap();
        let expected = [(0.5, 0.0), (0.0, 0.5), (-0.5, 0.0), (0.0, -0.5)];
        for (row, (re, im)) in expected.iter().enumerate() {
            assert_eq!(a[(row, 0)], Complex64::new(*re, *im));
        }
        let energy: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        assert_eq!(energy, 1.0);

        let d = holographic_design(5, 7.0).unwrap();
        let a = d.materialize_rows().unwrap();
        let ata = a.transpose() * &a;
        assert!(ata.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(dense_gram_error(&d) < 1e-15);
        assert_eq!(d.reference().unwrap(), &[7.0; 20][..]);
        assert!(holographic_design(0, 1.0).is_err());
        assert!(holographic_design(2, -1.0).is_err());
    }

    #[test]
    fn materialize_single_group() {
        let d = MeasurementDesign::from_groups(2, dft_code(3, 2).unwrap(), vec![vec![0, 1]], None)
            .unwrap();
        let a = d.materialize_rows().unwrap();
        let w = dft_code(3, 2).unwrap();
        assert_eq!(a.shape(), (3, 2));
        for q in 0..3 {
            for l in 0..2 {
                assert!((a[(q, l)] - w.get(q, l)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_design_is_rejected() {
        let r = MeasurementDesign::from_groups(2, dft_code(3, 2).unwrap(), vec![], None);
        assert!(r.is_err());
    }

    #[test]
    fn sparse_operators_match_dense() {
        let d = random_group_design(12, 3, 4, 9).unwrap();
        let a = d.materialize_rows().unwrap();
        let x: Vec<Complex64> = (0..12)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let y = d.apply(&x);
        let dense = &a * nalgebra::DVector::from_vec(x.clone());
        for (u, v) in y.iter().zip(dense.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
        let back = d.apply_adjoint(&y);
        let dense_back = a.adjoint() * nalgebra::DVector::from_vec(y);
        for (u, v) in back.iter().zip(dense_back.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
        // A^H A = I, so the round trip returns x.
        for (u, v) in back.iter().zip(&x) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn sparse_orthonormality_check_agrees() {
        let d = random_group_design(24, 5, 5, 2).unwrap();
        assert!(d.orthonormality_error() < 1e-12);
        assert!((d.orthonormality_error() - dense_gram_error(&d)).abs() < 1e-13);
    }
}
