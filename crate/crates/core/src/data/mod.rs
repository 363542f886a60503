//! Synthetic registration pairs: blob-and-noise scenes, bounded random
//! affine misalignment of the moving image and a global appearance shift of
//! the fixed image, organized as short temporal sequences.

mod affine;
mod dataset;
mod render;

pub use affine::{
    affine_from_unit, appearance_from_unit, appearance_shift, sample_affine, sample_appearance,
    warp_affine, warp_matrix, AffineParams, AffineRanges, AppearanceParams,
};
pub use dataset::{
    build_split, dataset_checksum, generate, load_split, sequence_seed, GenConfig, Sequence, SPLITS,
};
pub use render::{render_scene, Blob, SceneSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// One training/evaluation item.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationSample {
    pub moving: Image,
    pub fixed: Image,
    pub t: usize,
    pub seq_id: u64,
    pub affine: AffineParams,
    pub appearance: AppearanceParams,
}

/// A sequence of `len` frames over one scene: the moving image drifts
/// between two sampled endpoint affines, the fixed image is the scene under
/// one appearance shift for the whole sequence.
pub fn make_sequence(
    seed: u64,
    seq_id: u64,
    len: usize,
    width: usize,
    height: usize,
    max_frames: usize,
) -> Result<Vec<RegistrationSample>> {
    if len == 0 {
        return Err(Error::Config("sequence length must be >= 1".into()));
    }
    if len > max_frames {
        return Err(Error::Range {
            what: "sequence length vs embedding table rows",
            index: len,
            bound: max_frames,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SceneSpec::sample(&mut rng, width, height);
    let size = width.min(height);
    let start = sample_affine(&mut rng, size);
    let end = sample_affine(&mut rng, size);
    let appearance = sample_appearance(&mut rng);
    Ok(sequence_from_parts(&spec, &start, &end, appearance, seq_id, len))
}

/// Deterministic assembly given already sampled parameters.
pub fn sequence_from_parts(
    spec: &SceneSpec,
    start: &AffineParams,
    end: &AffineParams,
    appearance: AppearanceParams,
    seq_id: u64,
    len: usize,
) -> Vec<RegistrationSample> {
    let scene = render_scene(spec);
    let fixed = appearance_shift(&scene, &appearance);
    (0..len)
        .map(|t| {
            let affine = if len == 1 {
                *start
            } else {
                start.lerp(end, t as f64 / (len - 1) as f64)
            };
            RegistrationSample {
                moving: warp_affine(&scene, &affine),
                fixed: fixed.clone(),
                t,
                seq_id,
                affine,
                appearance,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_sequence() {
        let s = make_sequence(5, 0, 1, 32, 32, 64).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].t, 0);
    }

    #[test]
    fn equal_endpoints_share_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = SceneSpec::sample(&mut rng, 24, 24);
        let a = sample_affine(&mut rng, 24);
        let s = sequence_from_parts(&spec, &a, &a, AppearanceParams::IDENTITY, 3, 4);
        assert!(s.iter().all(|f| f.affine == a && f.moving == s[0].moving));
    }

    #[test]
    fn overlong_sequence_is_an_error() {
        assert!(matches!(
            make_sequence(1, 0, 65, 16, 16, 64),
            Err(Error::Range { .. })
        ));
        assert!(make_sequence(1, 0, 0, 16, 16, 64).is_err());
    }

    #[test]
    fn frames_hit_endpoints() {
        let s = make_sequence(11, 0, 4, 32, 32, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let _ = SceneSpec::sample(&mut rng, 32, 32);
        let a = sample_affine(&mut rng, 32);
        let b = sample_affine(&mut rng, 32);
        assert_eq!(s[0].affine, a);
        let last = s[3].affine;
        assert!((last.theta - b.theta).abs() < 1e-12 && (last.tx - b.tx).abs() < 1e-12);
        assert!(s.iter().enumerate().all(|(i, f)| f.t == i));
    }
}
