mod common;

use common::random_grid;
use pcgc::geometry::VoxelGrid;
use pcgc::learned_codec::{
    analysis, decode, decode_latents, encode, latent_shape, quantize, reconstruction_shape,
    CodecError, CompressedBitstream, ModelParams, QuantMode,
};

#[test]
fn latents_survive_the_bitstream() {
    let params = ModelParams::init(4, 3).unwrap();
    for seed in 0..50 {
        let grid = random_grid(32, seed);
        let expected = quantize(
            &analysis(&grid.to_tensor(), &params).unwrap(),
            QuantMode::Eval,
        );
        let bytes = encode(&grid, &params).unwrap().to_bytes();
        let bs = CompressedBitstream::from_bytes(&bytes).unwrap();
        let got = decode_latents(&bs).unwrap();
        assert_eq!(got.shape(), expected.shape());
        let same = got.data().iter().zip(expected.data()).all(|(a, b)| a == b);
        assert!(same, "grid {seed}: latents differ after the round trip");
        assert_eq!(bs.occupied as usize, grid.len());
    }
}

#[test]
fn paper_scale_shapes() {
    assert_eq!(latent_shape(32, [512; 3]).unwrap(), [32, 64, 64, 64]);
    assert_eq!(
        reconstruction_shape(32, [32, 64, 64, 64]).unwrap(),
        [1, 512, 512, 512]
    );
    assert_eq!(latent_shape(8, [64; 3]).unwrap(), [8, 8, 8, 8]);
    assert!(reconstruction_shape(32, [16, 64, 64, 64]).is_err());
}

#[test]
fn inferred_shapes_match_the_transforms() {
    let params = ModelParams::init(3, 0).unwrap();
    let grid = random_grid(16, 1);
    let y = analysis(&grid.to_tensor(), &params).unwrap();
    assert_eq!(y.shape(), latent_shape(3, [16; 3]).unwrap());
}

#[test]
fn higher_thresholds_keep_fewer_voxels() {
    let params = ModelParams::init(4, 5).unwrap();
    let grid = random_grid(32, 9);
    let bs = encode(&grid, &params).unwrap();
    let counts: Vec<usize> = [0.0, 0.1, 0.5, 0.9, 1.0]
        .iter()
        .map(|&t| decode(&bs, &params, t).unwrap().len())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    assert_eq!(counts[0], 32 * 32 * 32);
}

#[test]
fn foreign_or_damaged_streams_are_rejected() {
    let params = ModelParams::init(4, 5).unwrap();
    let grid = random_grid(32, 4);
    let bytes = encode(&grid, &params).unwrap().to_bytes();
    let other = ModelParams::init(4, 6).unwrap();
    let bs = CompressedBitstream::from_bytes(&bytes).unwrap();
    assert!(matches!(
        decode(&bs, &other, 0.5),
        Err(CodecError::ModelMismatch { .. })
    ));
    let mut cut = bytes.clone();
    cut.truncate(bytes.len() - 2);
    assert!(matches!(
        CompressedBitstream::from_bytes(&cut),
        Err(CodecError::Corrupt(_))
    ));
    let mut flipped = bs.clone();
    let last = flipped.payload.len() - 1;
    flipped.payload[last] ^= 0xff;
    flipped.payload.truncate(last - 1);
    assert!(decode(&flipped, &params, 0.5).is_err());
}

#[test]
fn empty_grids_cannot_be_encoded() {
    let params = ModelParams::init(2, 0).unwrap();
    assert!(encode(&VoxelGrid::empty(16).unwrap(), &params).is_err());
}
