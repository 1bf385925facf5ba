use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rskc::cloud::{parse_ply, voxelize, write_ply, ColorSpace, VoxelCloud};
use rskc::codec::{
    decode_frame, decode_sequence, encode_frame, encode_sequence, EncoderConfig, SkipMode,
};
use rskc::metrics::psnr;
use rskc::predict::{PredictionMode, Reference};
use rskc::synth::{random_cloud, shell_sequence, sphere_shell, ShellParams};
use rskc::Error;

fn shell(depth: u32, seed: u64) -> VoxelCloud {
    sphere_shell(&ShellParams {
        depth,
        ..ShellParams::with_seed(seed)
    })
    .unwrap()
}

#[test]
fn ply_roundtrip_in_ycbcr() {
    let cloud = shell(6, 3);
    let bytes = write_ply(&cloud, ColorSpace::YCbCr);
    let raw = parse_ply(&bytes).unwrap();
    assert_eq!(raw.len(), cloud.len());
    assert_eq!(voxelize(&raw, 6, 1.0).unwrap(), cloud);
}

#[test]
fn decoded_ply_reparses_to_the_reconstruction() {
    let cloud = shell(6, 4);
    let enc = encode_frame(&cloud, &EncoderConfig::with_qp(28), None).unwrap();
    let dec = decode_frame(&enc.bytes, None).unwrap();
    let raw = parse_ply(&write_ply(&dec.cloud, ColorSpace::YCbCr)).unwrap();
    assert_eq!(voxelize(&raw, 6, 1.0).unwrap(), enc.reconstruction);
}

#[test]
fn encoding_is_deterministic() {
    let cloud = shell(6, 5);
    let cfg = EncoderConfig::with_qp(34);
    let a = encode_frame(&cloud, &cfg, None).unwrap();
    let b = encode_frame(&cloud, &cfg, None).unwrap();
    assert_eq!(a.bytes, b.bytes);
    assert_eq!(a.reconstruction, b.reconstruction);
}

#[test]
fn constant_color_skips_everything() {
    let base = shell(6, 1);
    let flat = base.with_attrs(vec![[100, 128, 128]; base.len()]).unwrap();
    let enc = encode_frame(&flat, &EncoderConfig::with_qp(22), None).unwrap();
    assert_eq!(enc.stats.flags.flags(), [4, 4, 4]);
    let dec = decode_frame(&enc.bytes, None).unwrap();
    assert_eq!(dec.cloud, flat);
}

#[test]
fn inter_on_a_static_scene_is_cheaper() {
    let frames = shell_sequence(
        &ShellParams {
            depth: 6,
            grain: 2.0,
            ..ShellParams::with_seed(8)
        },
        1,
        0.0,
    )
    .unwrap();
    let still = vec![frames[0].clone(), frames[0].clone()];
    let intra = encode_sequence(&still, &EncoderConfig::with_qp(28)).unwrap();
    let inter = encode_sequence(
        &still,
        &EncoderConfig {
            mode: PredictionMode::Inter,
            ..EncoderConfig::with_qp(28)
        },
    )
    .unwrap();
    assert_eq!(intra.frames[0].bytes, inter.frames[0].bytes);
    assert!(inter.frames[1].bytes.len() < intra.frames[1].bytes.len());
    let decoded = decode_sequence(&inter.bytes).unwrap();
    assert_eq!(decoded[1].cloud, inter.frames[1].reconstruction);
}

#[test]
fn trailing_bytes_are_ignored() {
    let cloud = shell(5, 2);
    let enc = encode_frame(&cloud, &EncoderConfig::default(), None).unwrap();
    let mut padded = enc.bytes.clone();
    padded.extend_from_slice(b"trailing garbage");
    let dec = decode_frame(&padded, None).unwrap();
    assert_eq!(dec.cloud, enc.reconstruction);
}

#[test]
fn malformed_streams_are_rejected() {
    let cloud = shell(5, 2);
    let enc = encode_frame(&cloud, &EncoderConfig::default(), None).unwrap();
    let mut bad = enc.bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_frame(&bad, None), Err(Error::BadMagic)));
    assert!(matches!(
        decode_frame(&enc.bytes[..20], None),
        Err(Error::Truncated(_))
    ));
    let cut = enc.bytes.len() - 1;
    assert!(decode_frame(&enc.bytes[..cut], None).is_err());
    let inter = encode_frame(
        &cloud,
        &EncoderConfig {
            mode: PredictionMode::Inter,
            ..EncoderConfig::default()
        },
        Some(&Reference::from_cloud(&cloud)),
    )
    .unwrap();
    assert!(matches!(
        decode_frame(&inter.bytes, None),
        Err(Error::MissingReference)
    ));
}

#[test]
fn forced_skip_rejects_too_many_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tiny = random_cloud(&mut rng, 8, 2).unwrap();
    let cfg = EncoderConfig {
        skip: SkipMode::Forced([2, 0, 0]),
        ..EncoderConfig::default()
    };
    assert!(matches!(
        encode_frame(&tiny, &cfg, None),
        Err(Error::InvalidSkipFlag { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, 500, 5).unwrap();
        let signs: Vec<[i32; 3]> = (0..cloud.len()).map(|_| [0; 3].map(|_| if rng.gen() { 1 } else { -1 })).collect();
        let mut last = f64::INFINITY;
        for amount in [1, 2, 4, 8, 16] {
            let attrs = cloud
                .attrs()
                .iter()
                .zip(&signs)
                .map(|(a, s)| {
                    [0, 1, 2].map(|ch| {
                        let v = i32::from(a[ch]);
                        // reflect at the range ends so the error is always exactly `amount`
                        let shifted = v + s[ch] * amount;
                        (if (0..=255).contains(&shifted) { shifted } else { v - s[ch] * amount }) as u8
                    })
                })
                .collect();
            let noisy = cloud.with_attrs(attrs).unwrap();
            let p = psnr(&cloud, &noisy).unwrap().weighted();
            prop_assert!(p < last, "amount {amount}: {p} !< {last}");
            last = p;
        }
    }
}
