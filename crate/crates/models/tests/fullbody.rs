use candle_core::{DType, Device, Tensor};
use stratavatar_core::dataset::synthetic::{generate_sequence, MotionStyle};
use stratavatar_core::kinematics::{fk_pose, Pose};
use stratavatar_core::{KinematicTree, Mat3, Rotation6D};
use stratavatar_models::data::{rotation_tensor, stack_windows};
use stratavatar_models::fullbody::{refiner_loss, train_decoder, DecoderConfig, FullBodyDecoder, Refiner, RefinerConfig, RefinerWeights};
use stratavatar_models::geometry::{jitter_loss, mean_distance, scalar, TensorSkeleton};
use stratavatar_models::init::seeded_builder;
use stratavatar_models::train::TrainConfig;

fn small_decoder() -> DecoderConfig {
    DecoderConfig { width: 32, heads: 2, ff: 64, layers: 1, latent_dims: vec![8, 8], ..Default::default() }
}

#[test]
fn decoder_shapes() {
    let dev = Device::Cpu;
    let (_s, vb) = seeded_builder(0, DType::F32, &dev);
    let d = FullBodyDecoder::new(small_decoder(), vb).unwrap();
    let z = Tensor::zeros((2, 10, 8), DType::F32, &dev).unwrap();
    let out = d.decode(&[z.clone(), z.clone()]).unwrap();
    assert_eq!(out.dims(), &[2, 20, 132]);
    assert_eq!(out.to_vec3::<f32>().unwrap(), d.decode(&[z.clone(), z.clone()]).unwrap().to_vec3::<f32>().unwrap());
    assert!(d.decode(std::slice::from_ref(&z)).is_err());
    assert!(d.decode(&[z.clone(), z.narrow(2, 0, 4).unwrap()]).is_err());
}

#[test]
fn fresh_refiner_is_identity_and_exactly_additive() {
    let dev = Device::Cpu;
    let (store, vb) = seeded_builder(0, DType::F64, &dev);
    let r = Refiner::new(RefinerConfig { hidden: 16, layers: 2 }, vb).unwrap();
    let x = Tensor::randn(0f64, 1.0, (2, 7, 132), &dev).unwrap();
    let y = r.refine(&x).unwrap();
    assert_eq!(y.dims(), x.dims());
    assert_eq!(y.to_vec3::<f64>().unwrap(), x.to_vec3::<f64>().unwrap());
    // Nonzero output weights: refine - input equals the raw residual.
    let w = store.sorted_vars().into_iter().find(|(k, _)| k == "out.weight").unwrap().1;
    w.set(&Tensor::ones(w.shape(), DType::F64, &dev).unwrap()).unwrap();
    let res = r.residual(&x).unwrap();
    let d = ((r.refine(&x).unwrap() - &x).unwrap() - res).unwrap().abs().unwrap().max_all().unwrap();
    assert!(scalar(&d).unwrap() < 1e-12);
}

fn identity_frames(n: usize) -> Vec<f64> {
    (0..n * 22).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).collect()
}

#[test]
fn refiner_loss_closed_forms() {
    let dev = Device::Cpu;
    let tree = KinematicTree::<f64>::smpl();
    let sk = TensorSkeleton::new(&tree, DType::F64, &dev).unwrap();
    let w = RefinerWeights::default();

    // Matched input: only the jitter term remains.
    let seq = generate_sequence(MotionStyle::Wave, 12, 60.0, 2);
    let gt = rotation_tensor(&seq, DType::F64, &dev).unwrap().unsqueeze(0).unwrap();
    let l = refiner_loss(&gt, &gt, &sk, 60.0, &w).unwrap();
    for t in [&l.rec, &l.vel, &l.fk] {
        assert_eq!(scalar(t).unwrap(), 0.0);
    }
    let jit = scalar(&jitter_loss(&sk.positions(&gt).unwrap(), 60.0).unwrap()).unwrap();
    assert!((scalar(&l.jitter).unwrap() - w.jitter * jit).abs() < 1e-9 * jit.max(1.0));
    let w2 = RefinerWeights { jitter: 2.0 * w.jitter, ..w };
    let l2 = refiner_loss(&gt, &gt, &sk, 60.0, &w2).unwrap();
    assert!((scalar(&l2.jitter).unwrap() - 2.0 * scalar(&l.jitter).unwrap()).abs() < 1e-12);
    assert_eq!(scalar(&l2.fk).unwrap(), scalar(&l.fk).unwrap());

    // Two frames; frame 0 of the prediction bends the left elbow by 90°.
    let target = identity_frames(2);
    let mut pred = target.clone();
    let elbow = Rotation6D::from_matrix(&Mat3::rot_z(std::f64::consts::FRAC_PI_2)).unwrap();
    pred[18 * 6..18 * 6 + 6].copy_from_slice(&elbow.values);
    let tt = Tensor::from_vec(target.clone(), (1, 2, 132), &dev).unwrap();
    let pt = Tensor::from_vec(pred.clone(), (1, 2, 132), &dev).unwrap();
    let l = refiner_loss(&pt, &tt, &sk, 60.0, &w).unwrap();
    let sq: f64 = pred.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
    assert!((scalar(&l.rec).unwrap() - w.rec * sq / 264.0).abs() < 1e-15);
    let p = fk_pose(&Pose::from_rotation_vector(&pred[..132], Default::default()), &tree).unwrap();
    let q = fk_pose(&Pose::from_rotation_vector(&target[..132], Default::default()), &tree).unwrap();
    let per_joint: f64 = p.positions.iter().zip(&q.positions).map(|(a, b)| (*a - *b).norm()).sum::<f64>() / 22.0;
    assert!((scalar(&l.fk).unwrap() - w.fk * per_joint / 2.0).abs() < 1e-9);
    assert!((scalar(&l.vel).unwrap() - w.vel * per_joint).abs() < 1e-9, "{} vs {}", scalar(&l.vel).unwrap(), w.vel * per_joint);
    assert_eq!(scalar(&l.jitter).unwrap(), 0.0);
    let parts: f64 = [&l.rec, &l.vel, &l.fk, &l.jitter].iter().map(|t| scalar(t).unwrap()).sum();
    assert_eq!(scalar(&l.total).unwrap(), parts);
}

#[test]
fn jitter_ignores_constant_velocity() {
    let dev = Device::Cpu;
    let p = Tensor::randn(0f64, 1.0, (1, 9, 3, 3), &dev).unwrap();
    let ramp: Vec<f64> = (0..9).flat_map(|t| (0..9).map(move |k| 0.1 * t as f64 * (k as f64 - 4.0))).collect();
    let q = (&p + Tensor::from_vec(ramp, (1, 9, 3, 3), &dev).unwrap()).unwrap();
    let a = scalar(&jitter_loss(&p, 30.0).unwrap()).unwrap();
    let b = scalar(&jitter_loss(&q, 30.0).unwrap()).unwrap();
    assert!((a - b).abs() < 1e-9 * a);
}

#[test]
fn decoder_overfits_one_sequence() {
    let dev = Device::Cpu;
    let tree = KinematicTree::<f64>::smpl();
    let seq = generate_sequence(MotionStyle::Walk, 60, 60.0, 3);
    let rot = rotation_tensor(&seq, DType::F32, &dev).unwrap();
    let targets = stack_windows(&[rot], 20, 2).unwrap();
    // Latents: a fixed random projection of each frame pair.
    let n = targets.dim(0).unwrap();
    let pairs = targets.reshape((n, 10, 264)).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let proj = (stratavatar_models::diffusion::gaussian(&mut rng, &[264, 16], DType::F32, &dev).unwrap() * 0.1).unwrap();
    let z = pairs.broadcast_matmul(&proj).unwrap();
    let cfg = DecoderConfig { width: 64, heads: 4, ff: 128, layers: 2, latent_dims: vec![8, 8], ..Default::default() };
    let latents = [z.narrow(2, 0, 8).unwrap(), z.narrow(2, 8, 8).unwrap()];
    let tc = TrainConfig { epochs: 400, batch_size: 7, lr: 2e-3, milestones: vec![300], holdout: 0.0, ..Default::default() };
    let t = train_decoder(&cfg, &latents, &targets, &tree, &tc, 1).unwrap();
    let pred = t.model.decode(&latents).unwrap();
    let sk = TensorSkeleton::new(&tree, DType::F32, &dev).unwrap();
    let e = scalar(&mean_distance(&sk.positions(&pred).unwrap(), &sk.positions(&targets).unwrap()).unwrap()).unwrap();
    assert!(e < 0.015, "decoded MPJPE {} cm", e * 100.0);
}
