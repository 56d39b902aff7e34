//! Eight fixed geometric transforms in the axial `(m, n)` plane.

use rand::Rng;

use super::Volume;
use crate::error::{Error, Result};
use crate::label::ClassLabel;

/// Shift magnitude in voxels.
pub const SHIFT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Left-right mirror along `m`.
    Flip,
    /// Counter-clockwise quarter turns of the `(m, n)` plane.
    Rotate(u8),
    /// Translation with zero fill.
    Shift(i32, i32),
}

impl Step {
    pub fn inverse(self) -> Step {
        match self {
            Step::Flip => Step::Flip,
            Step::Rotate(q) => Step::Rotate((4 - q % 4) % 4),
            Step::Shift(a, b) => Step::Shift(-a, -b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub name: &'static str,
    pub steps: &'static [Step],
}

pub const TRANSFORMS: [Transform; 8] = [
    Transform { name: "identity", steps: &[] },
    Transform { name: "flip", steps: &[Step::Flip] },
    Transform { name: "shift_m+", steps: &[Step::Shift(SHIFT, 0)] },
    Transform { name: "shift_n-", steps: &[Step::Shift(0, -SHIFT)] },
    Transform { name: "shift_diag", steps: &[Step::Shift(-SHIFT, SHIFT)] },
    Transform { name: "rot90", steps: &[Step::Rotate(1)] },
    Transform { name: "flip_rot90", steps: &[Step::Flip, Step::Rotate(1)] },
    Transform { name: "flip_shift", steps: &[Step::Flip, Step::Shift(SHIFT, 0)] },
];

impl Transform {
    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        self.steps.iter().try_fold(v.clone(), |acc, &s| apply_step(&acc, s))
    }

    /// Undoes [`Transform::apply`]; exact except on voxels a shift filled with zeros.
    pub fn invert(&self, v: &Volume) -> Result<Volume> {
        self.steps.iter().rev().try_fold(v.clone(), |acc, &s| apply_step(&acc, s.inverse()))
    }

    /// Whether the transform only permutes voxels.
    pub fn is_permutation(&self) -> bool {
        self.steps.iter().all(|s| !matches!(s, Step::Shift(..)))
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims[0] <= SHIFT as usize || dims[1] <= SHIFT as usize {
        return Err(Error::InvalidArgument(format!(
            "axial plane {}x{} too small for a {SHIFT}-voxel shift",
            dims[0], dims[1]
        )));
    }
    Ok(())
}

pub fn apply_step(v: &Volume, step: Step) -> Result<Volume> {
    let [m, n, p] = v.dims();
    check_dims(v.dims())?;
    if matches!(step, Step::Rotate(q) if q % 4 != 0) && m != n {
        return Err(Error::InvalidArgument(format!("rotation needs a square axial plane, got {m}x{n}")));
    }
    let mut out = vec![0.0f32; v.data().len()];
    let plane = m * n * p;
    // Source (i, j) for each destination (i, j); None means zero fill.
    let source = |i: usize, j: usize| -> Option<(usize, usize)> {
        match step {
            Step::Flip => Some((m - 1 - i, j)),
            Step::Rotate(q) => {
                let (mut a, mut b) = (i, j);
                for _ in 0..q % 4 {
                    (a, b) = (b, n - 1 - a);
                }
                Some((a, b))
            }
            Step::Shift(di, dj) => {
                let si = i as i64 - di as i64;
                let sj = j as i64 - dj as i64;
                (si >= 0 && sj >= 0 && (si as usize) < m && (sj as usize) < n).then_some((si as usize, sj as usize))
            }
        }
    };
    for c in 0..v.channels() {
        let src = v.channel(c);
        let dst = &mut out[c * plane..(c + 1) * plane];
        for i in 0..m {
            for j in 0..n {
                if let Some((si, sj)) = source(i, j) {
                    let d = (i * n + j) * p;
                    let s = (si * n + sj) * p;
                    dst[d..d + p].copy_from_slice(&src[s..s + p]);
                }
            }
        }
    }
    v.like(v.channels(), out)
}

/// All eight transforms applied identically to input and target; the first is the identity.
pub fn augment_eightfold(input: &Volume, target: &Volume, label: ClassLabel) -> Result<Vec<(Volume, Volume, ClassLabel)>> {
    if input.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "input dims {:?} differ from target dims {:?}",
            input.dims(),
            target.dims()
        )));
    }
    TRANSFORMS
        .iter()
        .map(|t| Ok((t.apply(input)?, t.apply(target)?, label)))
        .collect()
}

/// One uniformly drawn transform, for online augmentation.
pub fn random_transform<R: Rng>(rng: &mut R) -> &'static Transform {
    &TRANSFORMS[rng.gen_range(0..TRANSFORMS.len())]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n: usize = dims.iter().product();
        Volume::new(1, dims, (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn four_rotations_are_identity() {
        let v = ramp([4, 4, 2]);
        let mut r = v.clone();
        for _ in 0..4 {
            r = apply_step(&r, Step::Rotate(1)).unwrap();
        }
        assert_eq!(r, v);
        assert_ne!(apply_step(&v, Step::Rotate(1)).unwrap(), v);
    }

    #[test]
    fn rotation_needs_square_plane() {
        assert!(apply_step(&ramp([4, 6, 2]), Step::Rotate(1)).is_err());
        assert!(apply_step(&ramp([2, 6, 2]), Step::Flip).is_err());
    }

    #[test]
    fn shift_moves_voxels() {
        let v = ramp([4, 4, 1]);
        let s = apply_step(&v, Step::Shift(2, 0)).unwrap();
        assert_eq!(&s.data()[..8], &[0.0; 8]);
        assert_eq!(&s.data()[8..12], &v.data()[..4]);
    }
}
