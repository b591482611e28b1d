//! Observation patterns, grouped datasets, modality partitions and sample
//! counts.
//!
//! A labelled dataset with missing covariates is stored as one group per
//! distinct observation pattern (the set of covariate indices recorded for a
//! row). Variables that always appear together across the patterns form a
//! modality; the per-modality and cross-modality sample counts drive every
//! moment estimator downstream.
//!
//! All types here are immutable after construction and can be shared freely
//! across threads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The set of covariate indices observed for a labelled group, 0-based and
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObservationPattern {
    observed: Vec<usize>,
    dim: usize,
}

impl ObservationPattern {
    /// Builds a pattern from observed indices; they must be non-empty,
    /// strictly increasing and within `0..dim`.
    pub fn new(observed: Vec<usize>, dim: usize) -> Result<Self> {
        if observed.is_empty() {
            return Err(Error::invalid("observation pattern must be non-empty"));
        }
        if observed.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "observation pattern indices must be strictly increasing",
            ));
        }
        if *observed.last().unwrap() >= dim {
            return Err(Error::invalid(format!(
                "observation pattern index {} out of range for dimension {}",
                observed.last().unwrap(),
                dim
            )));
        }
        Ok(Self { observed, dim })
    }

    /// Pattern observing every variable.
    pub fn full(dim: usize) -> Self {
        Self {
            observed: (0..dim).collect(),
            dim,
        }
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Complement of the observed set, i.e. the missing indices.
    pub fn missing(&self) -> Vec<usize> {
        let mut miss = Vec::with_capacity(self.dim - self.observed.len());
        let mut it = self.observed.iter().peekable();
        for j in 0..self.dim {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                miss.push(j);
            }
        }
        miss
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.observed.len() == self.dim
    }

    pub fn contains(&self, j: usize) -> bool {
        self.observed.binary_search(&j).is_ok()
    }
}

/// All labelled rows sharing one observation pattern: an `n_k x |O_k|` design
/// block over the observed columns and the matching responses.
#[derive(Debug, Clone)]
pub struct LabelledGroup {
    pattern: ObservationPattern,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl LabelledGroup {
    pub fn new(pattern: ObservationPattern, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "group design has {} rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("labelled group must contain at least one row"));
        }
        if x.ncols() != pattern.len() {
            return Err(Error::invalid(format!(
                "group design has {} columns but the pattern observes {} variables",
                x.ncols(),
                pattern.len()
            )));
        }
        for r in 0..x.nrows() {
            if !y[r].is_finite() || x.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row: r });
            }
        }
        Ok(Self { pattern, x, y })
    }

    pub fn pattern(&self) -> &ObservationPattern {
        &self.pattern
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Number of rows in this group.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// A labelled dataset grouped by observation pattern plus an optional fully
/// observed unlabelled block.
#[derive(Debug, Clone)]
pub struct MissingDataset {
    groups: Vec<LabelledGroup>,
    unlabelled: DMatrix<f64>,
    p: usize,
}

impl MissingDataset {
    /// Validates and stores the grouped data. Groups are sorted
    /// lexicographically by pattern so that construction is deterministic
    /// regardless of input order.
    pub fn new(mut groups: Vec<LabelledGroup>, unlabelled: DMatrix<f64>, p: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if unlabelled.nrows() > 0 && unlabelled.ncols() != p {
            return Err(Error::invalid(format!(
                "unlabelled block has {} columns, expected {}",
                unlabelled.ncols(),
                p
            )));
        }
        for r in 0..unlabelled.nrows() {
            if unlabelled.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row: r });
            }
        }
        for g in &groups {
            if g.pattern().dim() != p {
                return Err(Error::invalid("group pattern dimension mismatch"));
            }
        }
        groups.sort_by(|a, b| a.pattern().observed().cmp(b.pattern().observed()));
        if groups
            .windows(2)
            .any(|w| w[0].pattern().observed() == w[1].pattern().observed())
        {
            return Err(Error::invalid("group patterns must be pairwise distinct"));
        }
        let mut seen = vec![false; p];
        for g in &groups {
            for &j in g.pattern().observed() {
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::VariableNeverObserved(j));
        }
        Ok(Self {
            groups,
            unlabelled,
            p,
        })
    }

    pub fn groups(&self) -> &[LabelledGroup] {
        &self.groups
    }

    pub fn unlabelled(&self) -> &DMatrix<f64> {
        &self.unlabelled
    }

    /// Covariate dimension p.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of distinct observation patterns K.
    pub fn num_patterns(&self) -> usize {
        self.groups.len()
    }

    /// Total number of labelled rows.
    pub fn n_labelled(&self) -> usize {
        self.groups.iter().map(|g| g.n()).sum()
    }

    /// Number of unlabelled rows.
    pub fn n_unlabelled(&self) -> usize {
        self.unlabelled.nrows()
    }

    /// The complete-pattern group, if one exists.
    pub fn complete_group(&self) -> Option<&LabelledGroup> {
        self.groups.iter().find(|g| g.pattern().is_full())
    }

    /// Builds a sub-dataset from the labelled rows selected by `keep(group,
    /// row)`, dropping groups that end up empty. The unlabelled block is
    /// carried over unchanged. Fails when the selection no longer covers
    /// every variable.
    pub fn filter_rows(&self, keep: impl Fn(usize, usize) -> bool) -> Result<MissingDataset> {
        let mut groups = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            let rows: Vec<usize> = (0..g.n()).filter(|&r| keep(gi, r)).collect();
            if rows.is_empty() {
                continue;
            }
            let x = DMatrix::from_fn(rows.len(), g.pattern().len(), |i, j| g.x()[(rows[i], j)]);
            let y = DVector::from_fn(rows.len(), |i, _| g.y()[rows[i]]);
            groups.push(LabelledGroup::new(g.pattern().clone(), x, y)?);
        }
        MissingDataset::new(groups, self.unlabelled.clone(), self.p)
    }
}

/// The minimal pattern-respecting partition of variables: two variables share
/// a modality exactly when they belong to the same set of observation
/// patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityPartition {
    label: Vec<usize>,
    sizes: Vec<usize>,
}

impl ModalityPartition {
    /// Modality id of variable `j`.
    pub fn label(&self, j: usize) -> usize {
        self.label[j]
    }

    pub fn labels(&self) -> &[usize] {
        &self.label
    }

    /// Number of modalities L.
    pub fn num_modalities(&self) -> usize {
        self.sizes.len()
    }

    /// Number of variables in each modality.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Variables belonging to modality `l`, in increasing order.
    pub fn members(&self, l: usize) -> Vec<usize> {
        self.label
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == l)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Per-modality labelled sample counts `h_l` and cross-modality counts
/// `n_{g,h}` (rows observing both modalities).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleCounts {
    h: Vec<usize>,
    n_cross: Vec<usize>,
    l: usize,
}

impl SampleCounts {
    pub fn h(&self) -> &[usize] {
        &self.h
    }

    /// Cross-modality count `n_{g,h}`; symmetric, with `n_cross(g, g) = h_g`.
    pub fn n_cross(&self, g: usize, h: usize) -> usize {
        self.n_cross[g * self.l + h]
    }

    pub fn num_modalities(&self) -> usize {
        self.l
    }

    pub fn min_h(&self) -> usize {
        self.h.iter().copied().min().unwrap_or(0)
    }
}

/// One ingestion row: covariates with possibly missing cells plus an optional
/// response. Rows without a response are routed to the unlabelled block.
pub type RawRow = (Vec<Option<f64>>, Option<f64>);

/// Groups raw rows by observation pattern into a [`MissingDataset`].
///
/// Rows with a response must have at least one observed covariate; rows
/// without a response must be fully observed (they become unlabelled rows).
pub fn group_by_pattern(rows: &[RawRow]) -> Result<MissingDataset> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = rows[0].0.len();
    if p == 0 {
        return Err(Error::invalid("rows must contain at least one covariate"));
    }

    // Pattern -> (row-major observed values, responses); BTreeMap gives the
    // lexicographic group order required for determinism.
    let mut grouped: BTreeMap<Vec<usize>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut unlabelled_rows: Vec<f64> = Vec::new();
    let mut n_unlabelled = 0usize;

    for (idx, (cov, resp)) in rows.iter().enumerate() {
        if cov.len() != p {
            return Err(Error::invalid(format!(
                "row {} has {} covariates, expected {}",
                idx,
                cov.len(),
                p
            )));
        }
        if cov.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: idx });
        }
        match resp {
            Some(y) => {
                if !y.is_finite() {
                    return Err(Error::NonFiniteValue { row: idx });
                }
                let observed: Vec<usize> = cov
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_some())
                    .map(|(j, _)| j)
                    .collect();
                if observed.is_empty() {
                    return Err(Error::invalid(format!(
                        "row {} has no observed covariates",
                        idx
                    )));
                }
                let entry = grouped.entry(observed).or_default();
                entry.0.extend(cov.iter().flatten());
                entry.1.push(*y);
            }
            None => {
                if cov.iter().any(|v| v.is_none()) {
                    return Err(Error::UnlabelledRowIncomplete { row: idx });
                }
                unlabelled_rows.extend(cov.iter().flatten());
                n_unlabelled += 1;
            }
        }
    }

    if grouped.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let groups = grouped
        .into_iter()
        .map(|(observed, (values, ys))| {
            let n = ys.len();
            let width = observed.len();
            let pattern = ObservationPattern::new(observed, p)?;
            let x = DMatrix::from_row_slice(n, width, &values);
            let y = DVector::from_vec(ys);
            LabelledGroup::new(pattern, x, y)
        })
        .collect::<Result<Vec<_>>>()?;

    let unlabelled = DMatrix::from_row_slice(n_unlabelled, p, &unlabelled_rows);
    MissingDataset::new(groups, unlabelled, p)
}

/// Computes the minimal modality partition: variables are grouped by the set
/// of patterns observing them, with modality ids assigned in order of first
/// appearance over `0..p`.
pub fn partition_modalities(dataset: &MissingDataset) -> ModalityPartition {
    let p = dataset.p();
    let k = dataset.num_patterns();
    // Signature of variable j: which groups observe it.
    let mut signatures: Vec<Vec<bool>> = vec![vec![false; k]; p];
    for (gi, g) in dataset.groups().iter().enumerate() {
        for &j in g.pattern().observed() {
            signatures[j][gi] = true;
        }
    }

    let mut ids: BTreeMap<&Vec<bool>, usize> = BTreeMap::new();
    let mut label = vec![0usize; p];
    let mut sizes = Vec::new();
    for j in 0..p {
        let next = sizes.len();
        let id = *ids.entry(&signatures[j]).or_insert(next);
        if id == next && sizes.len() == next {
            sizes.push(0);
        }
        label[j] = id;
        sizes[id] += 1;
    }

    ModalityPartition { label, sizes }
}

/// Computes `h_l` and `n_{g,h}` for a dataset and its modality partition.
pub fn compute_counts(dataset: &MissingDataset, partition: &ModalityPartition) -> SampleCounts {
    let l = partition.num_modalities();
    let k = dataset.num_patterns();

    // Which groups contain each modality: a modality lies inside O_k exactly
    // when any (equivalently every) one of its variables does.
    let mut member_of: Vec<Vec<bool>> = vec![vec![false; k]; l];
    for (gi, g) in dataset.groups().iter().enumerate() {
        for &j in g.pattern().observed() {
            member_of[partition.label(j)][gi] = true;
        }
    }

    let group_sizes: Vec<usize> = dataset.groups().iter().map(|g| g.n()).collect();
    let mut h = vec![0usize; l];
    for (li, members) in member_of.iter().enumerate() {
        h[li] = members
            .iter()
            .zip(&group_sizes)
            .filter(|(&m, _)| m)
            .map(|(_, &n)| n)
            .sum();
    }

    let mut n_cross = vec![0usize; l * l];
    for g1 in 0..l {
        for g2 in g1..l {
            let count: usize = (0..k)
                .filter(|&gi| member_of[g1][gi] && member_of[g2][gi])
                .map(|gi| group_sizes[gi])
                .sum();
            n_cross[g1 * l + g2] = count;
            n_cross[g2 * l + g1] = count;
        }
    }

    SampleCounts { h, n_cross, l }
}

/// Checks the moment-estimation precondition `n_{g,h} + N > 0` for every pair
/// of modalities.
pub fn check_pair_coverage(counts: &SampleCounts, n_unlabelled: usize) -> Result<()> {
    if n_unlabelled > 0 {
        return Ok(());
    }
    let l = counts.num_modalities();
    for g in 0..l {
        for h in g..l {
            if counts.n_cross(g, h) == 0 {
                return Err(Error::PairNeverObserved(g, h));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cov: &[Option<f64>], y: Option<f64>) -> RawRow {
        (cov.to_vec(), y)
    }

    fn obs(vals: &[f64]) -> Vec<Option<f64>> {
        vals.iter().map(|&v| Some(v)).collect()
    }

    #[test]
    fn all_present_single_group() {
        let rows = vec![
            row(&obs(&[1.0, 2.0, 3.0]), Some(1.0)),
            row(&obs(&[4.0, 5.0, 6.0]), Some(2.0)),
            row(&obs(&[7.0, 8.0, 9.0]), Some(3.0)),
        ];
        let ds = group_by_pattern(&rows).unwrap();
        assert_eq!(ds.num_patterns(), 1);
        assert_eq!(ds.groups()[0].n(), 3);
        assert!(ds.groups()[0].pattern().is_full());
    }

    #[test]
    fn grouping_by_set_equality() {
        let rows = vec![
            row(&obs(&[1.0, 2.0, 3.0]), Some(1.0)),
            row(&[Some(1.0), Some(2.0), None], Some(2.0)),
            row(&obs(&[4.0, 5.0, 6.0]), Some(3.0)),
        ];
        let ds = group_by_pattern(&rows).unwrap();
        assert_eq!(ds.num_patterns(), 2);
        let sizes: Vec<usize> = ds.groups().iter().map(|g| g.n()).collect();
        // Lexicographic pattern order: {0,1} before {0,1,2}.
        assert_eq!(sizes, vec![1, 2]);
    }

    #[test]
    fn simple_monotonic_pattern() {
        let mut rows = Vec::new();
        for i in 0..100 {
            rows.push(row(&obs(&[i as f64, 1.0, 2.0, 3.0]), Some(0.5)));
        }
        for i in 0..5000 {
            rows.push(row(
                &[Some(i as f64), Some(1.0), Some(2.0), None],
                Some(0.5),
            ));
        }
        let ds = group_by_pattern(&rows).unwrap();
        assert_eq!(ds.num_patterns(), 2);
        assert_eq!(ds.groups()[0].pattern().observed(), &[0, 1, 2]);
        assert_eq!(ds.groups()[0].n(), 5000);
        assert!(ds.groups()[1].pattern().is_full());
        assert_eq!(ds.groups()[1].n(), 100);
    }

    #[test]
    fn unlabelled_routing_and_rejection() {
        let rows = vec![
            row(&obs(&[1.0, 2.0]), Some(1.0)),
            row(&obs(&[3.0, 4.0]), None),
        ];
        let ds = group_by_pattern(&rows).unwrap();
        assert_eq!(ds.n_unlabelled(), 1);
        assert_eq!(ds.unlabelled()[(0, 0)], 3.0);

        let bad = vec![
            row(&obs(&[1.0, 2.0]), Some(1.0)),
            row(&[Some(3.0), None], None),
        ];
        assert!(matches!(
            group_by_pattern(&bad),
            Err(Error::UnlabelledRowIncomplete { row: 1 })
        ));
    }

    #[test]
    fn never_observed_variable_is_an_error() {
        let rows = vec![
            row(&[Some(1.0), None], Some(1.0)),
            row(&[Some(2.0), None], Some(2.0)),
        ];
        assert!(matches!(
            group_by_pattern(&rows),
            Err(Error::VariableNeverObserved(1))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let rows = vec![row(&obs(&[1.0, f64::NAN]), Some(1.0))];
        assert!(matches!(
            group_by_pattern(&rows),
            Err(Error::NonFiniteValue { row: 0 })
        ));
        let rows = vec![row(&obs(&[1.0, 2.0]), Some(f64::INFINITY))];
        assert!(matches!(
            group_by_pattern(&rows),
            Err(Error::NonFiniteValue { row: 0 })
        ));
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(group_by_pattern(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn single_pattern_single_modality() {
        let rows = vec![row(&obs(&[1.0, 2.0, 3.0]), Some(1.0))];
        let ds = group_by_pattern(&rows).unwrap();
        let part = partition_modalities(&ds);
        assert_eq!(part.num_modalities(), 1);
        assert_eq!(part.sizes(), &[3]);
    }

    #[test]
    fn monotonic_two_modalities() {
        let p = 5;
        let p0 = 2;
        let mut rows = Vec::new();
        rows.push(row(&obs(&[1.0; 5]), Some(1.0)));
        let mut partial: Vec<Option<f64>> = vec![Some(1.0); p];
        for j in p - p0..p {
            partial[j] = None;
        }
        rows.push(row(&partial, Some(1.0)));
        let ds = group_by_pattern(&rows).unwrap();
        let part = partition_modalities(&ds);
        assert_eq!(part.num_modalities(), 2);
        assert_eq!(part.members(0), vec![0, 1, 2]);
        assert_eq!(part.members(1), vec![3, 4]);
    }

    #[test]
    fn three_pattern_cycle() {
        // O_1 = L1 u L2, O_2 = L1 u L3, O_3 = L2 u L3 over three equal blocks
        // of two variables each.
        let p = 6;
        let l1 = [0usize, 1];
        let l2 = [2usize, 3];
        let l3 = [4usize, 5];
        let make = |obs_sets: &[&[usize]]| -> Vec<Option<f64>> {
            let mut r = vec![None; p];
            for s in obs_sets {
                for &j in *s {
                    r[j] = Some(1.0);
                }
            }
            r
        };
        let n = 3;
        let mut rows = Vec::new();
        for _ in 0..n {
            rows.push(row(&make(&[&l1, &l2]), Some(1.0)));
            rows.push(row(&make(&[&l1, &l3]), Some(1.0)));
            rows.push(row(&make(&[&l2, &l3]), Some(1.0)));
        }
        let ds = group_by_pattern(&rows).unwrap();
        assert_eq!(ds.num_patterns(), 3);
        let part = partition_modalities(&ds);
        assert_eq!(part.num_modalities(), 3);
        let counts = compute_counts(&ds, &part);
        for g in 0..3 {
            assert_eq!(counts.h()[g], 2 * n);
            for h in 0..3 {
                if g != h {
                    assert_eq!(counts.n_cross(g, h), n);
                }
            }
            assert_eq!(counts.n_cross(g, g), counts.h()[g]);
        }
    }

    #[test]
    fn monotonic_counts() {
        // n_1 = 100 complete, n_2 = 5000 missing the last variable.
        let p = 3;
        let mut rows = Vec::new();
        for _ in 0..100 {
            rows.push(row(&obs(&[1.0, 1.0, 1.0]), Some(1.0)));
        }
        for _ in 0..5000 {
            rows.push(row(&[Some(1.0), Some(1.0), None], Some(1.0)));
        }
        let ds = group_by_pattern(&rows).unwrap();
        let part = partition_modalities(&ds);
        assert_eq!(part.num_modalities(), 2);
        let counts = compute_counts(&ds, &part);
        assert_eq!(counts.h(), &[5100, 100]);
        assert_eq!(counts.n_cross(0, 1), 100);
        assert_eq!(counts.n_cross(1, 0), 100);
        let _ = p;
    }

    #[test]
    fn full_pattern_counts() {
        let rows: Vec<RawRow> = (0..7).map(|i| row(&obs(&[i as f64, 1.0]), Some(0.0))).collect();
        let ds = group_by_pattern(&rows).unwrap();
        let part = partition_modalities(&ds);
        let counts = compute_counts(&ds, &part);
        assert_eq!(counts.h(), &[7]);
        assert_eq!(counts.n_cross(0, 0), 7);
    }

    #[test]
    fn partition_refines_patterns_and_is_idempotent() {
        let rows = vec![
            row(&[Some(1.0), Some(2.0), None, Some(3.0)], Some(1.0)),
            row(&[Some(1.0), None, Some(2.0), Some(3.0)], Some(1.0)),
            row(&obs(&[1.0, 2.0, 3.0, 4.0]), Some(1.0)),
        ];
        let ds = group_by_pattern(&rows).unwrap();
        let part = partition_modalities(&ds);
        // Every pattern must be a union of modalities.
        for g in ds.groups() {
            for l in 0..part.num_modalities() {
                let members = part.members(l);
                let inside = members.iter().filter(|&&j| g.pattern().contains(j)).count();
                assert!(inside == 0 || inside == members.len());
            }
        }
        // Idempotent: partitioning again yields the same labels.
        assert_eq!(partition_modalities(&ds), part);
    }

    #[test]
    fn pair_coverage_check() {
        // Two disjoint patterns: pair (modality of var 0, modality of var 1)
        // never jointly observed.
        let rows = vec![
            row(&[Some(1.0), None], Some(1.0)),
            row(&[None, Some(1.0)], Some(1.0)),
        ];
        let ds = group_by_pattern(&rows).unwrap();
        let part = partition_modalities(&ds);
        let counts = compute_counts(&ds, &part);
        assert!(matches!(
            check_pair_coverage(&counts, 0),
            Err(Error::PairNeverObserved(0, 1))
        ));
        assert!(check_pair_coverage(&counts, 5).is_ok());
    }
}
