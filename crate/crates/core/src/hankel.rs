//! Hankel matrices of measured data, persistence of excitation, and the data-based
//! trajectory membership test that replaces a plant model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{SystemRealization, Trajectory};

/// One measured input-output trajectory `{u_k, y_k}_{k=0}^{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTrajectory {
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
}

impl DataTrajectory {
    pub fn new(u: Vec<DVector<f64>>, y: Vec<DVector<f64>>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::InvalidArgument(
                "data trajectory must be non-empty".into(),
            ));
        }
        if u.len() != y.len() {
            return Err(Error::dim(format!(
                "data has {} inputs but {} outputs",
                u.len(),
                y.len()
            )));
        }
        check_uniform(&u, "input")?;
        check_uniform(&y, "output")?;
        Ok(DataTrajectory { u, y })
    }

    pub fn u(&self) -> &[DVector<f64>] {
        &self.u
    }
    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }
    pub fn len(&self) -> usize {
        self.u.len()
    }
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
    pub fn m(&self) -> usize {
        self.u[0].len()
    }
    pub fn p(&self) -> usize {
        self.y[0].len()
    }
}

fn check_uniform(seq: &[DVector<f64>], what: &str) -> Result<()> {
    if let Some(first) = seq.first() {
        if first.is_empty() {
            return Err(Error::dim(format!("{what} vectors must be non-empty")));
        }
        if let Some((k, v)) = seq.iter().enumerate().find(|(_, v)| v.len() != first.len()) {
            return Err(Error::dim(format!(
                "{what} {k} has dimension {}, expected {}",
                v.len(),
                first.len()
            )));
        }
    }
    Ok(())
}

/// Depth-`L` block Hankel matrix `H_L(x)` of a vector sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlock {
    depth: usize,
    dim: usize,
    matrix: DMatrix<f64>,
}

impl HankelBlock {
    pub fn depth(&self) -> usize {
        self.depth
    }
    /// Dimension of one sequence element.
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Block `(i, j)`, which equals element `i + j` of the source sequence.
    pub fn block(&self, i: usize, j: usize) -> DVector<f64> {
        self.matrix
            .view((i * self.dim, j), (self.dim, 1))
            .column(0)
            .into_owned()
    }

    /// Rows belonging to time offsets `first..first + count` inside the window.
    pub fn block_rows(&self, first: usize, count: usize) -> DMatrix<f64> {
        self.matrix
            .rows(first * self.dim, count * self.dim)
            .into_owned()
    }
}

pub fn hankel(seq: &[DVector<f64>], depth: usize) -> Result<HankelBlock> {
    if depth == 0 || depth > seq.len() {
        return Err(Error::Window {
            depth,
            len: seq.len(),
        });
    }
    check_uniform(seq, "sequence element")?;
    let dim = seq[0].len();
    let cols = seq.len() - depth + 1;
    let mut matrix = DMatrix::zeros(depth * dim, cols);
    for j in 0..cols {
        for i in 0..depth {
            matrix
                .view_mut((i * dim, j), (dim, 1))
                .copy_from(&seq[i + j]);
        }
    }
    Ok(HankelBlock { depth, dim, matrix })
}

/// Stacked window `x_{[a,b]}` (inclusive bounds).
pub fn stacked_window(seq: &[DVector<f64>], a: usize, b: usize) -> Result<DVector<f64>> {
    if a > b || b >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "window [{a}, {b}] outside sequence of length {}",
            seq.len()
        )));
    }
    Ok(linalg::stack(&seq[a..=b]))
}

/// Result of a persistence-of-excitation check.
#[derive(Debug, Clone, PartialEq)]
pub struct PeReport {
    pub order: usize,
    pub rank: usize,
    pub required: usize,
    /// Smallest singular value counted towards the rank.
    pub margin: f64,
    /// The sequence is too short for `H_L(u)` to have full row rank at all:
    /// `(m + 1) L - 1 > N`.
    pub structurally_impossible: bool,
}

impl PeReport {
    pub fn is_exciting(&self) -> bool {
        !self.structurally_impossible && self.rank == self.required
    }
}

/// Minimum data length for an `m`-dimensional input to be persistently exciting of `order`.
pub fn min_length_for_order(m: usize, order: usize) -> usize {
    ((m + 1) * order).saturating_sub(1)
}

pub fn persistence_of_excitation(u: &[DVector<f64>], order: usize) -> Result<PeReport> {
    let h = hankel(u, order)?;
    let m = h.dim();
    let required = m * order;
    let info = linalg::rank_info(h.matrix());
    Ok(PeReport {
        order,
        rank: info.rank,
        required,
        margin: info.margin,
        structurally_impossible: min_length_for_order(m, order) > u.len(),
    })
}

pub fn is_persistently_exciting(u: &[DVector<f64>], order: usize) -> bool {
    persistence_of_excitation(u, order)
        .map(|r| r.is_exciting())
        .unwrap_or(false)
}

/// Largest order `L` such that `u` is persistently exciting of every order `1..=L`.
pub fn max_pe_order(u: &[DVector<f64>]) -> usize {
    let Some(first) = u.first() else {
        return 0;
    };
    let bound = (u.len() + 1) / (first.len() + 1);
    let mut best = 0;
    for order in 1..=bound {
        if !is_persistently_exciting(u, order) {
            break;
        }
        best = order;
    }
    best
}

/// Inputs sampled uniformly and independently from the box `[lower, upper]`.
pub fn generate_pe_input(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    len: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::dim(
            "input bounds must be non-empty and of equal length",
        ));
    }
    if lower
        .iter()
        .zip(upper.iter())
        .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
    {
        return Err(Error::InvalidArgument(
            "input bounds must be finite with lower <= upper".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len)
        .map(|_| {
            DVector::from_iterator(
                lower.len(),
                lower.iter().zip(upper.iter()).map(
                    |(&l, &u)| {
                        if l == u {
                            l
                        } else {
                            rng.gen_range(l..=u)
                        }
                    },
                ),
            )
        })
        .collect())
}

/// Offline experiment: uniform random inputs applied to `plant` from `x0 = 0`.
pub fn generate_data(
    plant: &SystemRealization,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    len: usize,
    seed: u64,
) -> Result<DataTrajectory> {
    if lower.len() != plant.m() {
        return Err(Error::dim(format!(
            "input bounds have dimension {}, plant has m = {}",
            lower.len(),
            plant.m()
        )));
    }
    let u = generate_pe_input(lower, upper, len, seed)?;
    let traj = plant.simulate(&DVector::zeros(plant.n()), &u)?;
    DataTrajectory::new(traj.u, traj.y)
}

/// Stacked Hankel pair `[H_L(u); H_L(y)]` of the data.
#[derive(Debug, Clone)]
pub struct HankelPair {
    pub u: HankelBlock,
    pub y: HankelBlock,
}

impl HankelPair {
    pub fn new(data: &DataTrajectory, depth: usize) -> Result<Self> {
        Ok(HankelPair {
            u: hankel(data.u(), depth)?,
            y: hankel(data.y(), depth)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.u.depth()
    }

    pub fn ncols(&self) -> usize {
        self.u.ncols()
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let (ru, c) = self.u.matrix().shape();
        let ry = self.y.matrix().nrows();
        let mut out = DMatrix::zeros(ru + ry, c);
        out.rows_mut(0, ru).copy_from(self.u.matrix());
        out.rows_mut(ru, ry).copy_from(self.y.matrix());
        out
    }
}

/// Result of testing whether a window is a trajectory of the data-generating system.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    /// Infinity-norm residual of the least-squares fit.
    pub residual: f64,
    /// Minimum-norm coefficient vector.
    pub alpha: DVector<f64>,
}

/// Least-squares test of `[H_L(u); H_L(y)] alpha = [u_window; y_window]` with `L` the
/// window length. A residual near zero means the window is a trajectory of the system that
/// generated the data.
pub fn trajectory_membership(
    data: &DataTrajectory,
    window: &Trajectory,
    order: usize,
) -> Result<Membership> {
    let depth = window.len();
    if depth == 0 {
        return Err(Error::InvalidArgument("window must be non-empty".into()));
    }
    if window.u.iter().any(|u| u.len() != data.m()) || window.y.iter().any(|y| y.len() != data.p())
    {
        return Err(Error::dim("window dimensions do not match the data"));
    }
    let pe_order = depth + order;
    if pe_order > data.len() {
        return Err(Error::NotPersistentlyExciting {
            order: pe_order,
            rank: 0,
            required: data.m() * pe_order,
            structural: true,
        });
    }
    let pe = persistence_of_excitation(data.u(), pe_order)?;
    if !pe.is_exciting() {
        return Err(Error::NotPersistentlyExciting {
            order: pe_order,
            rank: pe.rank,
            required: pe.required,
            structural: pe.structurally_impossible,
        });
    }
    let pair = HankelPair::new(data, depth)?;
    let h = pair.stacked();
    let rhs = linalg::stack(&[linalg::stack(&window.u), linalg::stack(&window.y)]);
    let alpha = linalg::MinNormSolver::new(&h).solve(&rhs);
    let residual = linalg::inf_norm(&(&h * &alpha - rhs));
    Ok(Membership { residual, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{four_tank, random_minimal};

    fn scalars(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn scalar_hankel() {
        let h = hankel(&scalars(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.matrix(), &expected);
    }

    #[test]
    fn full_depth_hankel_is_stacked_sequence() {
        let seq: Vec<_> = (0..4)
            .map(|k| DVector::from_vec(vec![k as f64, -(k as f64)]))
            .collect();
        let h = hankel(&seq, 4).unwrap();
        assert_eq!(h.ncols(), 1);
        assert_eq!(h.matrix().column(0).into_owned(), linalg::stack(&seq));
        assert_eq!(stacked_window(&seq, 0, 3).unwrap(), linalg::stack(&seq));
    }

    #[test]
    fn hankel_block_structure_by_index() {
        let seq: Vec<_> = (0..5)
            .map(|k| DVector::from_vec(vec![k as f64 + 0.5, 10.0 * k as f64]))
            .collect();
        let h = hankel(&seq, 3).unwrap();
        assert_eq!(h.matrix().shape(), (6, 3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.block(i, j), seq[i + j]);
                for (c, &want) in seq[i + j].iter().enumerate() {
                    assert_eq!(h.matrix()[(i * 2 + c, j)], want);
                }
            }
        }
    }

    #[test]
    fn hankel_depth_errors() {
        assert!(matches!(
            hankel(&scalars(&[1.0, 2.0]), 3),
            Err(Error::Window { depth: 3, len: 2 })
        ));
        assert!(hankel(&scalars(&[1.0]), 0).is_err());
    }

    #[test]
    fn pe_small_cases() {
        assert!(!is_persistently_exciting(
            &scalars(&[1.0, -1.0, 1.0, -1.0]),
            2
        ));
        assert!(!is_persistently_exciting(
            &scalars(&[1.0, 0.0, 0.0, 0.0, 0.0]),
            2
        ));
        assert!(is_persistently_exciting(
            &scalars(&[1.0, 0.0, 0.0, 0.0, 0.0]),
            1
        ));
    }

    #[test]
    fn max_pe_order_small_cases() {
        assert_eq!(max_pe_order(&scalars(&[0.0; 6])), 0);
        assert_eq!(max_pe_order(&scalars(&[1.0, 0.0, 0.0])), 1);
    }

    #[test]
    fn uniform_inputs_reach_structural_maximum() {
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        let u = generate_pe_input(&lo, &hi, 100, 42).unwrap();
        assert_eq!(u, generate_pe_input(&lo, &hi, 100, 42).unwrap());
        assert!(u.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
        let r = persistence_of_excitation(&u, 33).unwrap();
        assert!(r.is_exciting() && r.margin > 1e-3);
        assert_eq!(max_pe_order(&u), 33);
        let r34 = persistence_of_excitation(&u, 34).unwrap();
        assert!(r34.structurally_impossible && !r34.is_exciting());
    }

    #[test]
    fn degenerate_bounds_give_zero_sequence() {
        let z = DVector::zeros(2);
        let u = generate_pe_input(&z, &z, 10, 1).unwrap();
        assert!(u.iter().all(|v| v == &z));
        assert_eq!(max_pe_order(&u), 0);
    }

    fn four_tank_data(len: usize) -> DataTrajectory {
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        generate_data(&four_tank(), &lo, &hi, len, 5).unwrap()
    }

    #[test]
    fn data_slices_are_members() {
        let data = four_tank_data(100);
        let l = 10;
        for start in [0, 17, 90] {
            let window = Trajectory::new(
                data.u()[start..start + l].to_vec(),
                data.y()[start..start + l].to_vec(),
            )
            .unwrap();
            let r = trajectory_membership(&data, &window, 4).unwrap();
            assert!(r.residual <= 1e-9, "residual {}", r.residual);
        }
    }

    #[test]
    fn fresh_trajectory_is_member_and_perturbed_is_not() {
        let sys = random_minimal(3, 1, 2, 4).unwrap();
        let lo = DVector::from_element(1, -1.0);
        let hi = DVector::from_element(1, 1.0);
        let data = generate_data(&sys, &lo, &hi, 60, 9).unwrap();
        let inputs = generate_pe_input(&lo, &hi, 8, 77).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -0.8, 1.1]);
        let mut window = sys.simulate(&x0, &inputs).unwrap();
        let r = trajectory_membership(&data, &window, 3).unwrap();
        assert!(r.residual <= 1e-8, "residual {}", r.residual);

        window.y[4][1] += 1.0;
        let r = trajectory_membership(&data, &window, 3).unwrap();
        assert!(r.residual >= 1e-3, "residual {}", r.residual);
    }

    #[test]
    fn membership_requires_enough_excitation() {
        let data = four_tank_data(30);
        let window = Trajectory::new(data.u()[..10].to_vec(), data.y()[..10].to_vec()).unwrap();
        // order 14 needs N >= 41
        let err = trajectory_membership(&data, &window, 4).unwrap_err();
        assert!(matches!(
            err,
            Error::NotPersistentlyExciting {
                structural: true,
                ..
            }
        ));
    }

    #[test]
    fn data_trajectory_invariants() {
        assert!(DataTrajectory::new(vec![], vec![]).is_err());
        assert!(DataTrajectory::new(scalars(&[1.0]), scalars(&[1.0, 2.0])).is_err());
        let d = DataTrajectory::new(scalars(&[1.0, 2.0]), scalars(&[3.0, 4.0])).unwrap();
        assert_eq!((d.len(), d.m(), d.p()), (2, 1, 1));
    }
}
